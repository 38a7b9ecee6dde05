"""Branched waypoint-heatmap networks.

``WaypointNet``: strided-conv encoder, velocity injected as an extra channel
into each up-convolution stage, and four command branches of K heatmaps each.
Spatial output is input/4 (192x192 -> 48x48, 384x160 -> 96x40).

``PerceptionNet``: image -> 7-channel map decoder used by the map-prediction
baseline mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from minidrive.nn import tensor as T
from minidrive.nn.tensor import Tensor


@dataclass(frozen=True)
class NetConfig:
    in_channels: int
    in_height: int
    in_width: int
    waypoints: int = 5
    branches: int = 4
    enc_channels: tuple[int, ...] = (16, 32, 64, 64, 64)
    dec_channels: tuple[int, ...] = (64, 32, 32)
    beta: float = 1.0
    heatmap_eps: float = 1e-6
    velocity_scale: float = 10.0

    @property
    def out_height(self) -> int:
        return self.in_height // 4

    @property
    def out_width(self) -> int:
        return self.in_width // 4

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "in_height": self.in_height,
            "in_width": self.in_width,
            "waypoints": self.waypoints,
            "branches": self.branches,
            "enc_channels": list(self.enc_channels),
            "dec_channels": list(self.dec_channels),
            "beta": self.beta,
            "heatmap_eps": self.heatmap_eps,
            "velocity_scale": self.velocity_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        d["dec_channels"] = tuple(d["dec_channels"])
        return NetConfig(**d)


def map_net_config(waypoints: int = 5) -> NetConfig:
    """Privileged agent: 7-channel 192x192 map input, 48x48 heatmaps."""
    return NetConfig(in_channels=7, in_height=192, in_width=192, waypoints=waypoints)


def camera_net_config(waypoints: int = 5) -> NetConfig:
    """Sensorimotor agent: RGB 160x384 input, 40x96 heatmaps."""
    return NetConfig(in_channels=3, in_height=160, in_width=384, waypoints=waypoints)


def _he_conv(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(np.float32)


class _ParamHolder:
    """Shared parameter bookkeeping for the network classes."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def params(self) -> dict[str, Tensor]:
        return self._params

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        if set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise T.ShapeMismatch(f"state dict mismatch: missing={missing} extra={extra}")
        for k, v in state.items():
            if tuple(v.shape) != tuple(self._params[k].data.shape):
                raise T.ShapeMismatch(f"tensor {k}: {v.shape} vs {self._params[k].data.shape}")
            self._params[k].data = v.astype(np.float32).copy()


class WaypointNet(_ParamHolder):
    def __init__(self, config: NetConfig, rng: np.random.Generator | None = None):
        super().__init__()
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        cin = config.in_channels
        for i, cout in enumerate(config.enc_channels):
            self._add(f"enc{i}.w", _he_conv(rng, (cout, cin, 3, 3), cin * 9))
            self._add(f"enc{i}.b", np.zeros(cout, dtype=np.float32))
            cin = cout
        for i, cout in enumerate(config.dec_channels):
            cin_v = cin + 1  # +1 velocity channel
            self._add(f"dec{i}.w", _he_conv(rng, (cin_v, cout, 3, 3), cin_v * 9))
            self._add(f"dec{i}.b", np.zeros(cout, dtype=np.float32))
            cin = cout
        n_out = config.branches * config.waypoints
        # Zero-initialized head: uniform 0.5 heatmaps, soft-argmax at center.
        self._add("head.w", np.zeros((n_out, cin, 1, 1), dtype=np.float32))
        self._add("head.b", np.zeros(n_out, dtype=np.float32))

    def forward(self, x, v) -> Tensor:
        """x: (B, C, H, W) input raster; v: (B,) speed m/s.

        Returns heatmaps (B, branches, K, H/4, W/4) in [0, 1].
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.data.ndim != 4 or x.data.shape[1:] != (cfg.in_channels, cfg.in_height, cfg.in_width):
            raise T.ShapeMismatch(
                f"input {x.data.shape}, expected (B, {cfg.in_channels}, "
                f"{cfg.in_height}, {cfg.in_width})"
            )
        v = np.asarray(v, dtype=np.float32).reshape(-1)
        if v.shape[0] != x.data.shape[0]:
            raise T.ShapeMismatch("velocity batch size mismatch")
        vn = v / cfg.velocity_scale

        h = x
        for i in range(len(cfg.enc_channels)):
            h = T.conv2d(h, self._params[f"enc{i}.w"], self._params[f"enc{i}.b"], stride=2, padding=1)
            h = T.leaky_relu(h)
        for i in range(len(cfg.dec_channels)):
            b, _, hh, ww = h.data.shape
            vchan = Tensor(np.broadcast_to(vn[:, None, None, None], (b, 1, hh, ww)).copy())
            h = T.concat([h, vchan], axis=1)
            h = T.conv_transpose2d(
                h, self._params[f"dec{i}.w"], self._params[f"dec{i}.b"],
                stride=2, padding=1, output_padding=1,
            )
            h = T.leaky_relu(h)
        h = T.conv2d(h, self._params["head.w"], self._params["head.b"], stride=1, padding=0)
        h = T.sigmoid(h)
        b = h.data.shape[0]
        return T.reshape(h, (b, cfg.branches, cfg.waypoints, cfg.out_height, cfg.out_width))

    def predict_waypoints(self, x, v) -> Tensor:
        """Soft-argmax coordinates (B, branches, K, 2) in heatmap index units."""
        cfg = self.config
        heat = self.forward(x, v)
        b = heat.data.shape[0]
        flat = T.reshape(heat, (b, cfg.branches * cfg.waypoints, cfg.out_height, cfg.out_width))
        coords = T.soft_argmax2d(flat, beta=cfg.beta, eps=cfg.heatmap_eps)
        return T.reshape(coords, (b, cfg.branches, cfg.waypoints, 2))


@dataclass(frozen=True)
class PerceptionConfig:
    in_channels: int = 3
    size: int = 192
    out_channels: int = 7
    enc_channels: tuple[int, ...] = (16, 32, 64, 64, 64)
    dec_channels: tuple[int, ...] = (64, 64, 32, 16, 16)

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "size": self.size,
            "out_channels": self.out_channels,
            "enc_channels": list(self.enc_channels),
            "dec_channels": list(self.dec_channels),
        }

    @staticmethod
    def from_dict(d: dict) -> "PerceptionConfig":
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        d["dec_channels"] = tuple(d["dec_channels"])
        return PerceptionConfig(**d)


class PerceptionNet(_ParamHolder):
    """Predicts the 7-channel map crop from a resized RGB image (baseline mode)."""

    def __init__(self, config: PerceptionConfig | None = None, rng: np.random.Generator | None = None):
        super().__init__()
        self.config = config if config is not None else PerceptionConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg = self.config
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.enc_channels):
            self._add(f"enc{i}.w", _he_conv(rng, (cout, cin, 3, 3), cin * 9))
            self._add(f"enc{i}.b", np.zeros(cout, dtype=np.float32))
            cin = cout
        for i, cout in enumerate(cfg.dec_channels):
            self._add(f"dec{i}.w", _he_conv(rng, (cin, cout, 3, 3), cin * 9))
            self._add(f"dec{i}.b", np.zeros(cout, dtype=np.float32))
            cin = cout
        self._add("head.w", np.zeros((cfg.out_channels, cin, 1, 1), dtype=np.float32))
        self._add("head.b", np.zeros(cfg.out_channels, dtype=np.float32))

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.data.shape[1:] != (cfg.in_channels, cfg.size, cfg.size):
            raise T.ShapeMismatch(f"input {x.data.shape}, expected (B, {cfg.in_channels}, {cfg.size}, {cfg.size})")
        h = x
        for i in range(len(cfg.enc_channels)):
            h = T.conv2d(h, self._params[f"enc{i}.w"], self._params[f"enc{i}.b"], stride=2, padding=1)
            h = T.leaky_relu(h)
        for i in range(len(cfg.dec_channels)):
            h = T.conv_transpose2d(
                h, self._params[f"dec{i}.w"], self._params[f"dec{i}.b"],
                stride=2, padding=1, output_padding=1,
            )
            h = T.leaky_relu(h)
        h = T.conv2d(h, self._params["head.w"], self._params["head.b"], stride=1, padding=0)
        return T.sigmoid(h)
