"""Feature pyramids and the scale-wise convolution residual block."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction

from . import tensor as T
from .errors import ShapeError
from .resample import ResamplerKind, as_ratio, resample, scaled_size


@dataclass
class Conv:
    """A weight/bias pair applied with same-size zero padding."""

    weight: T.Tensor
    bias: T.Tensor | None = None

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.conv2d(x, self.weight, self.bias, pad=(self.weight.shape[2] - 1) // 2)


@dataclass
class FeaturePyramid:
    scales: list
    ratio: Fraction
    requested: int = 0

    @property
    def n(self) -> int:
        return len(self.scales)

    @property
    def sizes(self) -> list:
        return [tuple(x.shape[2:]) for x in self.scales]

    @property
    def truncated(self) -> bool:
        return self.requested > self.n


def pyramid_sizes(h: int, w: int, n: int, ratio) -> list:
    """Sizes of an ``n``-level pyramid, stopping early once a level reaches 1x1."""
    sizes = [(h, w)]
    while len(sizes) < n and sizes[-1] != (1, 1):
        ph, pw = sizes[-1]
        sizes.append((scaled_size(ph, ratio), scaled_size(pw, ratio)))
    return sizes


def build_pyramid(x: T.Tensor, n: int, ratio, down=ResamplerKind.BILINEAR, weight: T.Tensor | None = None) -> FeaturePyramid:
    """Progressively down-sample ``x`` into ``n`` scales (scale 1 is ``x``).

    Each level is resampled from the previous level, not from ``x``.
    ``weight`` is the strided kernel when ``down`` is the strided kind.
    """
    if n < 1:
        raise ShapeError(f"pyramid needs n >= 1, got {n}")
    ratio = as_ratio(ratio)
    sizes = pyramid_sizes(x.shape[2], x.shape[3], n, ratio)
    if len(sizes) < n:
        warnings.warn(f"pyramid collapsed to 1x1 after {len(sizes)} of {n} scales; truncating", stacklevel=2)
    scales = [x]
    for size in sizes[1:]:
        scales.append(resample(down, "down", scales[-1], ratio, size, weight))
    return FeaturePyramid(scales, ratio, requested=n)


@dataclass
class BlockWeights:
    """Weights of one scale-wise residual block.

    ``expand``/``reduce`` hold one :class:`Conv` shared by every scale, or a
    list with one entry per scale when unshared. ``q`` maps offset ``i`` (or
    ``(s, i)`` when unshared) to a pointwise :class:`Conv`. ``h`` maps offset
    to a learned strided kernel.
    """

    expand: Conv | list
    reduce: Conv | list
    q: dict
    h: dict = field(default_factory=dict)
    shared: bool = True

    def p(self, s: int) -> tuple:
        if self.shared:
            return self.expand, self.reduce
        return self.expand[s], self.reduce[s]

    def q_for(self, s: int, i: int) -> Conv:
        return self.q[i] if self.shared else self.q[(s, i)]


def scalewise_residual_block(pyr: FeaturePyramid, w: BlockWeights, k: int = 1, resampler=ResamplerKind.BILINEAR) -> FeaturePyramid:
    """One residual block with scale-wise convolution of half-width ``k``.

    Every scale runs the shared expand -> relu -> reduce path once. Output
    scale ``s`` is ``x_s`` plus the sum over offsets ``i`` of
    ``resample(q_i(r_{s+i}))``; offsets pointing outside the pyramid are
    dropped.
    """
    width = w.p(0)[0].weight.shape[1]
    if pyr.scales[0].shape[1] != width:
        raise ShapeError(f"pyramid has {pyr.scales[0].shape[1]} channels, block expects {width}")
    n = pyr.n
    sizes = pyr.sizes
    reduced = []
    for s, x in enumerate(pyr.scales):
        expand, reduce = w.p(s)
        reduced.append(reduce(T.relu(expand(x))))

    out = []
    for s in range(n):
        terms = []
        for i in range(-k, k + 1):
            src = s + i
            if not 0 <= src < n:
                continue
            y = w.q_for(s, i)(reduced[src])
            if i != 0:
                direction = "down" if i < 0 else "up"
                y = resample(resampler, direction, y, pyr.ratio ** abs(i), sizes[s], w.h.get(i))
            terms.append(y)
        out.append(T.add(pyr.scales[s], T.add_n(terms)))
    return FeaturePyramid(out, pyr.ratio, pyr.requested)


def collapse_largest(pyr: FeaturePyramid) -> T.Tensor:
    return pyr.scales[0]
