"""minidrive: a small 2D urban driving simulator plus a two-stage waypoint
imitation pipeline (privileged map-based teacher distilled into a camera-based
student) and route-based closed-loop benchmarks with infraction accounting."""

__version__ = "0.1.0"
