"""Reverse-mode automatic differentiation over float32 numpy arrays.

Each op records its parents and a backward closure; ``Tensor.backward()``
walks the graph in reverse topological order. Convolutions run through an
im2col/GEMM path so training stays CPU-feasible. Every op here has a
finite-difference test in the suite.
"""

from __future__ import annotations

import numpy as np

from minidrive.geometry import ProjectionParams

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Enable NaN/Inf output checks after every op (slow; for tests)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


class ShapeMismatch(Exception):
    pass


class GraphNotBuilt(Exception):
    pass


def _as_f32(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float32)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate gradients into every reachable ``requires_grad`` leaf."""
        if self._backward is None and not self._parents:
            raise GraphNotBuilt("tensor has no recorded graph to differentiate")
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("implicit gradient only for scalar outputs")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = _as_f32(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Convenience operators used by the training code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray, own: bool = False):
    """Accumulate a gradient. ``own=True`` promises ``g`` is a fresh array not
    shared with any other tensor, letting us adopt it without a copy."""
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        if own and g.dtype == np.float32 and g.flags.c_contiguous:
            t.grad = g
        else:
            t.grad = g.astype(np.float32, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        ga = _unbroadcast(g, a.data.shape)
        gb = _unbroadcast(g, b.data.shape)
        _accum(a, ga, own=ga is not g)
        _accum(b, gb, own=gb is not g)

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward(g):
        ga = _unbroadcast(g, a.data.shape)
        gb = _unbroadcast(-g, b.data.shape)
        _accum(a, ga, own=ga is not g)
        _accum(b, gb, own=True)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape), own=True)
        _accum(b, _unbroadcast(g * a.data, b.data.shape), own=True)

    return _make(data, (a, b), backward)


def abs_(a) -> Tensor:
    a = _wrap(a)
    data = np.abs(a.data)

    def backward(g):
        _accum(a, g * np.sign(a.data), own=True)

    return _make(data, (a,), backward)


def sum_(a) -> Tensor:
    a = _wrap(a)
    data = np.array(a.data.sum(), dtype=np.float32)

    def backward(g):
        _accum(a, np.broadcast_to(g, a.data.shape).astype(np.float32), own=True)

    return _make(data, (a,), backward)


def mean(a) -> Tensor:
    a = _wrap(a)
    n = a.data.size
    data = np.array(a.data.mean(), dtype=np.float32)

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).astype(np.float32), own=True)

    return _make(data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(old))

    return _make(data, (a,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(data, tuple(ts), backward)


def leaky_relu(a, alpha: float = 0.1) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    data = np.where(mask, a.data, alpha * a.data)

    def backward(g):
        _accum(a, np.where(mask, g, alpha * g), own=True)

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    # Stable two-sided form avoids exp overflow for large |x|.
    pos = a.data >= 0
    e = np.exp(np.where(pos, -a.data, a.data))
    data = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.float32)

    def backward(g):
        _accum(a, g * data * (1.0 - data), own=True)

    return _make(data, (a,), backward)


# -- convolution helpers ------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(B, C, Hp, Wp) pre-padded input -> (B*oh*ow, C*k*k) patch matrix."""
    b, c = xp.shape[:2]
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (B, C, oh, ow, k, k)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * k * k)
    return np.ascontiguousarray(cols)


def _col2im(cols: np.ndarray, xp_shape, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the grid."""
    b, c, hp, wp = xp_shape
    out = np.zeros(xp_shape, dtype=np.float32)
    patches = cols.reshape(b, oh, ow, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += patches[
                :, :, :, :, i, j
            ]
    return out


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x, w, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution. x: (B, Cin, H, W); w: (Cout, Cin, k, k); bias: (Cout,)."""
    x, w, bias = _wrap(x), _wrap(w), _wrap(bias)
    b, cin, h, wdt = x.data.shape
    cout, cin_w, k, k2 = w.data.shape
    if cin != cin_w or k != k2:
        raise ShapeMismatch(f"conv2d weight {w.data.shape} vs input {x.data.shape}")
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wdt + 2 * padding - k) // stride + 1
    xp = _pad_hw(x.data, padding)
    cols = _im2col(xp, k, stride, oh, ow)
    wm = w.data.reshape(cout, cin * k * k)
    out = cols @ wm.T + bias.data
    data = out.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * oh * ow, cout)
        if w.requires_grad or w._parents:
            _accum(w, (gf.T @ cols).reshape(w.data.shape), own=True)
        if bias.requires_grad or bias._parents:
            _accum(bias, gf.sum(axis=0), own=True)
        if x.requires_grad or x._parents:
            dcols = gf @ wm
            dxp = _col2im(dcols, xp.shape, k, stride, oh, ow)
            if padding:
                dxp = np.ascontiguousarray(dxp[:, :, padding:-padding, padding:-padding])
            _accum(x, dxp, own=True)

    return _make(data, (x, w, bias), backward)


def conv_transpose2d(
    x, w, bias, stride: int = 2, padding: int = 1, output_padding: int = 1
) -> Tensor:
    """Transposed 2D convolution (fractionally-strided).

    x: (B, Cin, H, W); w: (Cin, Cout, k, k); output spatial size is
    ``(H - 1) * stride - 2 * padding + k + output_padding``.
    """
    x, w, bias = _wrap(x), _wrap(w), _wrap(bias)
    b, cin, h, wdt = x.data.shape
    cin_w, cout, k, k2 = w.data.shape
    if cin != cin_w or k != k2:
        raise ShapeMismatch(f"conv_transpose2d weight {w.data.shape} vs input {x.data.shape}")
    oh = (h - 1) * stride - 2 * padding + k + output_padding
    ow = (wdt - 1) * stride - 2 * padding + k + output_padding
    full_h = (h - 1) * stride + k
    full_w = (wdt - 1) * stride + k

    xf = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(b * h * wdt, cin)
    wm = w.data.reshape(cin, cout * k * k)
    cols = xf @ wm
    full = _col2im(cols, (b, cout, full_h, full_w), k, stride, h, wdt)
    data = full[:, :, padding : padding + oh, padding : padding + ow]
    data = data + bias.data.reshape(1, cout, 1, 1)

    def backward(g):
        gfull = np.zeros((b, cout, full_h, full_w), dtype=np.float32)
        gfull[:, :, padding : padding + oh, padding : padding + ow] = g
        gcols = _im2col(gfull, k, stride, h, wdt)
        if bias.requires_grad or bias._parents:
            _accum(bias, g.sum(axis=(0, 2, 3)), own=True)
        if w.requires_grad or w._parents:
            _accum(w, (xf.T @ gcols).reshape(w.data.shape), own=True)
        if x.requires_grad or x._parents:
            dxf = gcols @ wm.T
            _accum(x, np.ascontiguousarray(dxf.reshape(b, h, wdt, cin).transpose(0, 3, 1, 2)), own=True)

    return _make(data, (x, w, bias), backward)


def soft_argmax2d(h, beta: float = 1.0, eps: float = 1e-6) -> Tensor:
    """Expected (x, y) pixel coordinates under normalized heatmaps.

    h: (B, C, H, W) nonnegative scores -> (B, C, 2) coordinates in heatmap
    index units, x along width, y along height. An ``eps`` floor keeps the
    normalizer strictly positive.
    """
    h = _wrap(h)
    b, c, hh, ww = h.data.shape
    p = h.data.astype(np.float64) + eps
    if beta != 1.0:
        p = p ** (1.0 / beta)
    z = p.sum(axis=(2, 3))  # (B, C)
    xs = np.arange(ww, dtype=np.float64)
    ys = np.arange(hh, dtype=np.float64)
    ex = (p.sum(axis=2) @ xs) / z
    ey = (p.sum(axis=3) @ ys) / z
    data = np.stack([ex, ey], axis=-1).astype(np.float32)

    def backward(g):
        gx = g[..., 0].astype(np.float64)[:, :, None, None]
        gy = g[..., 1].astype(np.float64)[:, :, None, None]
        dx = xs[None, None, None, :] - ex[:, :, None, None]
        dy = ys[None, None, :, None] - ey[:, :, None, None]
        dp = (gx * dx + gy * dy) / z[:, :, None, None]
        if beta != 1.0:
            dp = dp * (1.0 / beta) * p / (h.data.astype(np.float64) + eps)
        _accum(h, dp.astype(np.float32), own=True)

    return _make(data, (h,), backward)


def select_branch(x, idx: np.ndarray) -> Tensor:
    """Pick one command branch per batch element: (B, 4, ...) -> (B, ...)."""
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.int64)
    b = x.data.shape[0]
    if idx.shape != (b,):
        raise ShapeMismatch(f"branch index shape {idx.shape} for batch {b}")
    rows = np.arange(b)
    data = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        _accum(x, gx, own=True)

    return _make(data, (x,), backward)


def camera_pixels_to_ground(pix, params: ProjectionParams) -> Tensor:
    """Differentiable ground-plane projection of camera-pixel waypoints.

    pix: (..., 2) camera-pixel coordinates (x right, y up from the image
    bottom). Returns (..., 2) ego-ground (forward, left) meters. The horizon
    denominator is clamped at ``horizon_margin`` so early-training predictions
    near the canvas center stay finite (gradient is zero where clamped).
    """
    pix = _wrap(pix)
    cx, cy = params.canvas_center
    f = params.focal
    py = params.cam_height
    x = pix.data[..., 0].astype(np.float64)
    y = pix.data[..., 1].astype(np.float64)
    denom = cy - y
    clamped = denom < params.horizon_margin
    denom = np.maximum(denom, params.horizon_margin)
    fwd = f * py / denom + params.setback
    left = (cx - x) * py / denom
    data = np.stack([fwd, left], axis=-1).astype(np.float32)

    def backward(g):
        gf = g[..., 0].astype(np.float64)
        gl = g[..., 1].astype(np.float64)
        inv = 1.0 / denom
        dfwd_dy = np.where(clamped, 0.0, f * py * inv * inv)
        dleft_dy = np.where(clamped, 0.0, (cx - x) * py * inv * inv)
        dleft_dx = -py * inv
        gx = gl * dleft_dx
        gy = gf * dfwd_dy + gl * dleft_dy
        _accum(pix, np.stack([gx, gy], axis=-1).astype(np.float32), own=True)

    return _make(data, (pix,), backward)


def l1_loss(pred, target, weights: np.ndarray | None = None) -> Tensor:
    """Mean absolute coordinate difference, optionally per-sample weighted.

    ``weights`` (if given) has shape (B,) and is normalized to mean 1 so the
    loss scale stays comparable to the unweighted case.
    """
    pred = _wrap(pred)
    target = _wrap(target)
    if pred.data.shape != target.data.shape:
        raise ShapeMismatch(f"pred {pred.data.shape} vs target {target.data.shape}")
    diff = abs_(sub(pred, target))
    if weights is None:
        return mean(diff)
    w = np.asarray(weights, dtype=np.float32)
    w = w / max(float(w.mean()), 1e-12)
    w = w.reshape((-1,) + (1,) * (pred.data.ndim - 1))
    return mean(mul(diff, Tensor(w)))
