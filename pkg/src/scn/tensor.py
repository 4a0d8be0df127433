"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation in this
module records a :class:`Node` on its output when at least one input requires
a gradient; :meth:`Tensor.backward` walks those records in reverse
topological order and accumulates gradients into the leaves.

Feature maps use the (batch, channel, height, width) layout. Biases are rank-1.
Operations preserve the floating dtype of their inputs, so the same graph can
be run in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, SizeError

DEFAULT_DTYPE = np.float32
MAX_ELEMENTS = 2**40

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, optimizer updates)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@dataclass(eq=False)
class Node:
    """Graph record attached to a computed tensor.

    ``vjp`` maps the upstream gradient to one gradient per parent (``None``
    for parents that do not require one). Values needed by the backward rule
    are captured in its closure.
    """

    op: str
    parents: tuple
    vjp: Callable[[np.ndarray], tuple]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, node: Node | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype, requires_grad: bool | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.astype(dtype), requires_grad=rg)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self.node.op}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}{op})"

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def _record(data: np.ndarray, parents: Sequence[Tensor], op: str, vjp) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, node=Node(op, tuple(parents), vjp))
    return Tensor(data)


# ---------------------------------------------------------------------------
# construction


def _check_dims(dims) -> tuple:
    dims = tuple(int(d) for d in dims)
    if any(d < 0 for d in dims):
        raise SizeError(f"negative dimension in {dims}")
    if math.prod(dims) > MAX_ELEMENTS:
        raise SizeError(f"tensor of dims {dims} exceeds {MAX_ELEMENTS} elements")
    return dims


def create(
    dims,
    fill: str = "zeros",
    *,
    value: float = 0.0,
    lo: float = 0.0,
    hi: float = 1.0,
    fan_in: int | None = None,
    seed: int = 0,
    dtype=DEFAULT_DTYPE,
    requires_grad: bool = False,
) -> Tensor:
    """Create a tensor with one of the fills ``zeros``, ``constant``,
    ``uniform`` or ``he_normal``.

    Seeded fills are deterministic: the same ``(dims, fill, seed)`` always
    yields the same bits.
    """
    dims = _check_dims(dims)
    if fill == "zeros":
        data = np.zeros(dims, dtype=dtype)
    elif fill == "constant":
        data = np.full(dims, value, dtype=dtype)
    elif fill == "uniform":
        if not lo < hi:
            raise ValueError(f"uniform fill needs lo < hi, got {lo}, {hi}")
        data = np.random.default_rng(seed).uniform(lo, hi, size=dims).astype(dtype)
    elif fill == "he_normal":
        if fan_in is None:
            fan_in = math.prod(dims[1:]) if len(dims) > 1 else 1
        std = math.sqrt(2.0 / max(fan_in, 1))
        data = (np.random.default_rng(seed).standard_normal(dims) * std).astype(dtype)
    else:
        raise ValueError(f"unknown fill {fill!r}")
    return Tensor(data, requires_grad=requires_grad)


def zeros(dims, dtype=DEFAULT_DTYPE) -> Tensor:
    return create(dims, "zeros", dtype=dtype)


def tensor(data, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative post-order DFS; deep networks would overflow recursion
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t.node.parents, t.node.vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# ---------------------------------------------------------------------------
# elementwise


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add: {x.shape} vs {y.shape}")
    return _record(x.data + y.data, (x, y), "add", lambda g: (g, g))


def add_n(xs: Sequence[Tensor]) -> Tensor:
    """Sum in the given order; the fixed order keeps results reproducible."""
    out = xs[0]
    for x in xs[1:]:
        out = add(out, x)
    return out


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"mul: {x.shape} vs {y.shape}")
    xd, yd = x.data, y.data
    return _record(xd * yd, (x, y), "mul", lambda g: (g * yd, g * xd))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return _record(x.data * c, (x,), "scale", lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0).astype(x.dtype), (x,), "relu", lambda g: (g * mask,))


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries as a (1, 1, 1, 1) tensor."""
    shape = x.shape
    out = np.sum(x.data, dtype=x.dtype).reshape(1, 1, 1, 1)
    return _record(out, (x,), "sum", lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error as a (1, 1, 1, 1) tensor; the subgradient at ties is 0."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = (np.abs(diff).sum(dtype=np.float64) / n).astype(pred.dtype).reshape(1, 1, 1, 1)

    def vjp(g):
        s = np.sign(diff) * (g.reshape(()) / n)
        return s.astype(pred.dtype), (-s).astype(target.dtype)

    return _record(out, (pred, target), "l1_loss", vjp)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channels by default)."""
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), "concat", vjp)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the two spatial axes; negative amounts crop instead."""
    b, c, h, w = x.shape
    nh, nw = h + top + bottom, w + left + right
    if nh <= 0 or nw <= 0:
        raise ShapeError(f"pad2d would produce size ({nh}, {nw})")
    out = np.zeros((b, c, nh, nw), dtype=x.dtype)
    # overlap between the source rows and destination rows
    sy0, dy0 = max(0, -top), max(0, top)
    sx0, dx0 = max(0, -left), max(0, left)
    ny = min(h - sy0, nh - dy0)
    nx = min(w - sx0, nw - dx0)
    out[:, :, dy0 : dy0 + ny, dx0 : dx0 + nx] = x.data[:, :, sy0 : sy0 + ny, sx0 : sx0 + nx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, :, sy0 : sy0 + ny, sx0 : sx0 + nx] = g[:, :, dy0 : dy0 + ny, dx0 : dx0 + nx]
        return (gx,)

    return _record(out, (x,), "pad2d", vjp)


# ---------------------------------------------------------------------------
# convolution


def _norm_pad(pad) -> tuple:
    if isinstance(pad, (int, np.integer)):
        return (int(pad),) * 4
    pad = tuple(int(p) for p in pad)
    if len(pad) == 2:
        return (pad[0], pad[0], pad[1], pad[1])
    if len(pad) != 4:
        raise ValueError(f"pad must be an int, a pair or (top, bottom, left, right); got {pad}")
    return pad


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c, hp, wp = shape
    cols = cols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape, dtype=cols.dtype)
    ye, xe = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + ye : stride, j : j + xe : stride] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad=0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``w`` has shape (c_out, c_in, kh, kw). ``pad`` is an int or
    (top, bottom, left, right). Output size per axis is
    ``(H + pads - k) // stride + 1``.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape}, {w.shape}")
    bsz, cin, h, wid = x.shape
    cout, wcin, kh, kw = w.shape
    if cin != wcin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {cout} outputs")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    pt, pb, pl, pr = _norm_pad(pad)
    if min(pt, pb, pl, pr) < 0:
        raise ShapeError("conv2d: negative padding; crop with pad2d first")
    hp, wp = h + pt + pb, wid + pl + pr
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if hp < kh or wp < kw or ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: output size ({ho}, {wo}) is empty for input {x.shape}")

    wmat = w.data.reshape(cout, -1)
    if kh == 1 and kw == 1 and stride == 1 and (pt, pb, pl, pr) == (0, 0, 0, 0):
        return _pointwise(x, w, b, wmat)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2))

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _col2im(g2 @ wmat, xp.shape, kh, kw, stride, ho, wo)
            gx = gxp[:, :, pt : pt + h, pl : pl + wid]
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, "conv2d", vjp)


def _pointwise(x: Tensor, w: Tensor, b: Tensor | None, wmat: np.ndarray) -> Tensor:
    bsz, cin, h, wid = x.shape
    cout = wmat.shape[0]
    x3 = x.data.reshape(bsz, cin, h * wid)
    out = np.matmul(wmat, x3)
    if b is not None:
        out += b.data[:, None]

    def vjp(g):
        g3 = g.reshape(bsz, cout, h * wid)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(wmat.T, g3).reshape(x.shape)
        if w.requires_grad:
            gw = np.einsum("boh,bch->oc", g3, x3).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g3.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _record(out.reshape(bsz, cout, h, wid), parents, "conv2d", vjp)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed convolution (the adjoint of :func:`conv2d` without padding).

    ``w`` has shape (c_in, c_out, kh, kw). Output size per axis is
    ``(H - 1) * stride + k``; crop or pad afterwards with :func:`pad2d`.
    """
    bsz, cin, h, wid = x.shape
    wcin, cout, kh, kw = w.shape
    if cin != wcin:
        raise ShapeError(f"conv_transpose2d: input has {cin} channels, kernel expects {wcin}")
    if stride < 1:
        raise ShapeError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    ho, wo = (h - 1) * stride + kh, (wid - 1) * stride + kw
    wmat = w.data.reshape(cin, -1)
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    out = _col2im(x2 @ wmat, (bsz, cout, ho, wo), kh, kw, stride, h, wid)
    if b is not None:
        out += b.data[:, None, None]

    def vjp(g):
        gcols = _im2col(g, kh, kw, stride, h, wid)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.ascontiguousarray((gcols @ wmat.T).reshape(bsz, h, wid, cin).transpose(0, 3, 1, 2))
        if w.requires_grad:
            gw = (x2.T @ gcols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, "conv_transpose2d", vjp)


# ---------------------------------------------------------------------------
# spatial rearrangement and separable resampling


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(b, c*r*r, h, w) -> (b, c, h*r, w*r); input channel index is (c, dy, dx) row-major."""
    bsz, cr, h, w = x.shape
    if r < 1 or cr % (r * r):
        raise ShapeError(f"pixel_shuffle: {cr} channels not divisible by {r}^2")
    c = cr // (r * r)
    out = x.data.reshape(bsz, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(bsz, c, h * r, w * r)

    def vjp(g):
        return (g.reshape(bsz, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return _record(np.ascontiguousarray(out), (x,), "pixel_shuffle", vjp)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    bsz, c, hr, wr = x.shape
    if r < 1 or hr % r or wr % r:
        raise ShapeError(f"pixel_unshuffle: spatial size {(hr, wr)} not divisible by {r}")
    h, w = hr // r, wr // r
    out = x.data.reshape(bsz, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(bsz, c * r * r, h, w)

    def vjp(g):
        return (g.reshape(bsz, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),)

    return _record(np.ascontiguousarray(out), (x,), "pixel_unshuffle", vjp)


def separable(x: Tensor, mh: np.ndarray, mw: np.ndarray, op: str = "separable") -> Tensor:
    """Apply ``mh @ x @ mw.T`` on every (batch, channel) plane.

    All parameter-free resamplers are expressed as a pair of 1-D interpolation
    matrices, so the backward pass is the transposed pair.
    """
    if x.shape[2] != mh.shape[1] or x.shape[3] != mw.shape[1]:
        raise ShapeError(f"{op}: matrices {mh.shape}, {mw.shape} do not fit input {x.shape}")
    mh = mh.astype(x.dtype, copy=False)
    mw = mw.astype(x.dtype, copy=False)
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return _record(out, (x,), op, lambda g: (np.matmul(np.matmul(mh.T, g), mw),))


# ---------------------------------------------------------------------------
# parameters and verification


def param_count(store) -> int:
    """Total number of scalar parameters in a mapping of name -> Tensor."""
    return int(sum(t.size for t in store.values()))


@dataclass
class GradCheckResult:
    index: int
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list
    tol: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(*inputs)`` with central differences.

    Inputs are promoted to float64. The per-element error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the report
    holds the maximum per input.
    """
    xs = [Tensor(np.array(t.data, dtype=np.float64), requires_grad=True) for t in inputs]
    loss = f(*xs)
    backward(loss)
    analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in xs]

    entries = []
    with no_grad():
        for idx, x in enumerate(xs):
            num = np.zeros_like(x.data)
            flat = x.data.reshape(-1)
            nflat = num.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fp = f(*xs).item()
                flat[j] = orig - h
                fm = f(*xs).item()
                flat[j] = orig
                nflat[j] = (fp - fm) / (2 * h)
            a = analytic[idx]
            denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
            err = float(np.max(np.abs(a - num) / denom)) if a.size else 0.0
            entries.append(GradCheckResult(idx, err, err <= tol))
    return GradCheckReport(entries, tol)
