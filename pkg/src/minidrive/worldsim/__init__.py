"""Deterministic 2D urban world: road network, traffic lights, scripted
traffic, ego kinematics, expert autopilot, routes, and infraction detection."""

from minidrive.worldsim.network import (
    Intersection,
    Lane,
    RoadNetwork,
    StopLine,
    build_towns,
    load_network,
    save_network,
)
from minidrive.worldsim.routes import (
    Route,
    load_routes,
    sample_route,
    sample_routes,
    save_routes,
)
from minidrive.worldsim.world import (
    Command,
    ControlOutput,
    EgoState,
    OffRouteError,
    TrafficLevel,
    TrafficLightView,
    WorldState,
    make_world,
    step,
)
from minidrive.worldsim.expert import ExpertAutopilot, command_at
from minidrive.worldsim.infractions import (
    Infraction,
    InfractionDetector,
    detect_infractions,
)

__all__ = [
    "Command",
    "ControlOutput",
    "EgoState",
    "ExpertAutopilot",
    "Infraction",
    "InfractionDetector",
    "Intersection",
    "Lane",
    "OffRouteError",
    "RoadNetwork",
    "Route",
    "StopLine",
    "TrafficLevel",
    "TrafficLightView",
    "WorldState",
    "build_towns",
    "command_at",
    "detect_infractions",
    "load_network",
    "load_routes",
    "make_world",
    "sample_route",
    "sample_routes",
    "save_network",
    "save_routes",
    "step",
]
