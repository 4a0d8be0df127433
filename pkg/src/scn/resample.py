"""Spatial resampling: differentiable rescalers for pyramid fusion and the
bicubic resizer used to synthesize low-resolution inputs.

Parameter-free kinds are built from 1-D interpolation matrices and applied
with :func:`scn.tensor.separable`. Coordinates use half-pixel centers with
edge clamping.
"""

from __future__ import annotations

import math
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError


class ResamplerKind(str, Enum):
    STRIDED = "strided_conv_deconv"
    AVGPOOL_NEAREST = "avgpool_nearest"
    BILINEAR = "bilinear"

    @classmethod
    def parse(cls, value) -> "ResamplerKind":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown resampler {value!r}; expected one of {[k.value for k in cls]}") from None


def as_ratio(value) -> Fraction:
    """Parse a scaling ratio given as Fraction, ``"p/q"`` string, or float."""
    if isinstance(value, Fraction):
        r = value
    elif isinstance(value, str):
        r = Fraction(value.strip())
    elif isinstance(value, int):
        r = Fraction(value)
    else:
        # decimal literal of the float, so 0.75 -> 3/4 and 0.33 -> 33/100
        r = Fraction(repr(float(value)))
    if not 0 < r < 1:
        raise ConfigError(f"ratio must lie in (0, 1), got {value}")
    return r


def scaled_size(n: int, ratio) -> int:
    """``max(1, round(n * ratio))`` with ties rounded away from zero."""
    return max(1, math.floor(n * as_ratio(ratio) + Fraction(1, 2)))


def integer_stride(ratio) -> int:
    r = as_ratio(ratio)
    if r.numerator != 1:
        raise ConfigError(f"ratio {r} is not the reciprocal of an integer; strided resamplers need 1/n")
    return r.denominator


# ---------------------------------------------------------------------------
# 1-D interpolation matrices (rows: output samples, cols: input samples)


@lru_cache(maxsize=512)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - t)
    np.add.at(m, (rows, i1), t)
    m.setflags(write=False)
    return m


def cubic_kernel(t, a: float = -0.5):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=512)
def bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    rows = np.arange(n_out)
    for off in (-1, 0, 1, 2):
        tap = base + off
        np.add.at(m, (rows, np.clip(tap, 0, n_in - 1)), cubic_kernel(src - tap))
    m.setflags(write=False)
    return m


@lru_cache(maxsize=512)
def avgpool_matrix(n_in: int, n_out: int, stride: int) -> np.ndarray:
    """Mean over consecutive blocks of ``stride`` samples; the last block may be partial."""
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        lo = min(o * stride, n_in - 1)
        hi = min(lo + stride, n_in)
        m[o, lo:hi] = 1.0 / (hi - lo)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=512)
def nearest_matrix(n_in: int, n_out: int, stride: int) -> np.ndarray:
    """Replicate each input sample ``stride`` times (clamped at the far edge)."""
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), np.minimum(np.arange(n_out) // stride, n_in - 1)] = 1.0
    m.setflags(write=False)
    return m


# ---------------------------------------------------------------------------
# operators


def _check_out(out_h: int, out_w: int) -> None:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got ({out_h}, {out_w})")


def bilinear_resize(x: T.Tensor, out_h: int, out_w: int) -> T.Tensor:
    _check_out(out_h, out_w)
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x
    return T.separable(x, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w), "bilinear")


def bicubic_resize(x: T.Tensor, out_h: int, out_w: int) -> T.Tensor:
    """Catmull-Rom (a = -0.5) resize without anti-aliasing. Data-pipeline use."""
    _check_out(out_h, out_w)
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x
    with T.no_grad():
        return T.separable(x, bicubic_matrix(h, out_h), bicubic_matrix(w, out_w), "bicubic")


def avgpool_down(x: T.Tensor, stride: int, out_h: int, out_w: int) -> T.Tensor:
    h, w = x.shape[2:]
    return T.separable(x, avgpool_matrix(h, out_h, stride), avgpool_matrix(w, out_w, stride), "avgpool")


def nearest_up(x: T.Tensor, stride: int, out_h: int, out_w: int) -> T.Tensor:
    h, w = x.shape[2:]
    return T.separable(x, nearest_matrix(h, out_h, stride), nearest_matrix(w, out_w, stride), "nearest")


def strided_down(x: T.Tensor, weight: T.Tensor, stride: int, out_h: int, out_w: int) -> T.Tensor:
    """Strided convolution with a (c, c, 2s, 2s) kernel, padded or cropped to hit the target size."""
    k = weight.shape[2]
    h, w = x.shape[2:]
    front = stride // 2
    back_h = (out_h - 1) * stride + k - h - front
    back_w = (out_w - 1) * stride + k - w - front
    return T.conv2d(T.pad2d(x, front, back_h, front, back_w), weight, stride=stride)


def strided_up(x: T.Tensor, weight: T.Tensor, stride: int, out_h: int, out_w: int) -> T.Tensor:
    """Transposed strided convolution, cropped or padded to the target size."""
    y = T.conv_transpose2d(x, weight, stride=stride)
    front = stride // 2
    fh, fw = y.shape[2:]
    return T.pad2d(y, -front, out_h - (fh - front), -front, out_w - (fw - front))


def box_kernel(channels: int, stride: int, direction: str, dtype=T.DEFAULT_DTYPE) -> np.ndarray:
    """Per-channel box filter that makes the strided kinds equal avgpool / nearest.

    Down kernels are normalized (sum 1/s^2 per tap); up kernels copy.
    """
    k = 2 * stride
    front = stride // 2
    w = np.zeros((channels, channels, k, k), dtype=dtype)
    val = 1.0 / (stride * stride) if direction == "down" else 1.0
    for c in range(channels):
        w[c, c, front : front + stride, front : front + stride] = val
    return w


def resample(
    kind,
    direction: str,
    x: T.Tensor,
    ratio,
    target: tuple,
    weight: T.Tensor | None = None,
) -> T.Tensor:
    """Move ``x`` to the exact ``target`` (h, w) one pyramid step or more away.

    ``ratio`` is the overall size factor (< 1) between the small and large
    side. ``weight`` is the learned kernel for the strided kind.
    """
    kind = ResamplerKind.parse(kind)
    if direction not in ("down", "up"):
        raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")
    out_h, out_w = target
    _check_out(out_h, out_w)
    if kind is ResamplerKind.BILINEAR:
        return bilinear_resize(x, out_h, out_w)
    stride = integer_stride(ratio)
    if kind is ResamplerKind.AVGPOOL_NEAREST:
        if direction == "down":
            return avgpool_down(x, stride, out_h, out_w)
        return nearest_up(x, stride, out_h, out_w)
    if weight is None:
        raise ConfigError("strided resampling needs a learned kernel")
    if weight.shape[2] != 2 * stride:
        raise ConfigError(f"strided kernel size {weight.shape[2]} does not match stride {stride}")
    if direction == "down":
        return strided_down(x, weight, stride, out_h, out_w)
    return strided_up(x, weight, stride, out_h, out_w)
