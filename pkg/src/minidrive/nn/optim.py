"""Adam optimizer with bias correction. No weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from minidrive.nn.tensor import ShapeMismatch, Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One in-place Adam update from the accumulated gradients.

    Parameters with no gradient this step are skipped (their moments keep
    their previous values).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeMismatch(f"grad shape {p.grad.shape} vs param {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (p.grad * p.grad)
        mh = m / bc1
        vh = v / bc2
        p.data -= (state.lr * mh / (np.sqrt(vh) + state.eps)).astype(np.float32)
