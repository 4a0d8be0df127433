"""Finite-difference check of every differentiable operation, in float64."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .pyramid import BlockWeights, Conv, FeaturePyramid, scalewise_residual_block
from .resample import as_ratio, resample

SEEDS = 5
TOL = 1e-4
STEP = 1e-5


@dataclass
class SuiteEntry:
    op: str
    seed: int
    passed: bool
    max_rel_error: float


def _u(rng, *shape):
    return T.Tensor(rng.uniform(-1, 1, size=shape))


def _probe(y: T.Tensor, m: T.Tensor) -> T.Tensor:
    # random weighting so the checked gradient is not all ones
    return T.sum_all(T.mul(y, m))


def _avoid_kinks(x: T.Tensor, margin: float = 1e-3) -> T.Tensor:
    """Push values away from 0 so a finite step never crosses a relu/abs kink."""
    d = x.data.copy()
    d[np.abs(d) < margin] += 2 * margin
    return T.Tensor(d)


def _conv2d(rng):
    x, w, b = _u(rng, 2, 3, 7, 6), _u(rng, 4, 3, 3, 3), _u(rng, 4)
    m = _u(rng, 2, 4, 4, 3)
    return lambda x, w, b: _probe(T.conv2d(x, w, b, stride=2, pad=1), m), [x, w, b]


def _relu(rng):
    x = _avoid_kinks(_u(rng, 1, 2, 5, 5))
    m = _u(rng, 1, 2, 5, 5)
    return lambda x: _probe(T.relu(x), m), [x]


def _add(rng):
    a, b = _u(rng, 1, 2, 4, 4), _u(rng, 1, 2, 4, 4)
    m = _u(rng, 1, 2, 4, 4)
    return lambda a, b: _probe(T.add(a, b), m), [a, b]


def _pixel_shuffle(rng):
    x = _u(rng, 1, 8, 3, 2)
    m = _u(rng, 1, 2, 6, 4)
    return lambda x: _probe(T.pixel_shuffle(x, 2), m), [x]


def _resample_case(kind, direction):
    def make(rng):
        if direction == "down":
            x, target = _u(rng, 1, 2, 7, 6), (4, 3)
        else:
            x, target = _u(rng, 1, 2, 4, 3), (7, 6)
        m = _u(rng, 1, 2, *target)
        if kind == "strided_conv_deconv":
            k = _u(rng, 2, 2, 4, 4)
            return lambda x, k: _probe(resample(kind, direction, x, "1/2", target, k), m), [x, k]
        return lambda x: _probe(resample(kind, direction, x, "1/2", target), m), [x]

    return make


def _scalewise_block(rng):
    width, mult = 2, 2
    sizes = [(6, 6), (3, 3), (2, 2)]
    xs = [_u(rng, 1, width, h, w) for h, w in sizes]
    ms = [_u(rng, 1, width, h, w) for h, w in sizes]
    params = [_u(rng, width * mult, width, 3, 3), _u(rng, width * mult), _u(rng, width, width * mult, 3, 3), _u(rng, width)]
    params += [_u(rng, width, width, 1, 1) for _ in range(3)] + [_u(rng, width) for _ in range(3)]
    ratio = as_ratio("1/2")

    def f(*args):
        scales, p = args[:3], args[3:]
        q = {i: Conv(p[4 + j], p[7 + j]) for j, i in enumerate((-1, 0, 1))}
        w = BlockWeights(Conv(p[0], p[1]), Conv(p[2], p[3]), q)
        out = scalewise_residual_block(FeaturePyramid(list(scales), ratio, 3), w, 1)
        return T.add_n([_probe(o, m) for o, m in zip(out.scales, ms)])

    return f, xs + params


def _l1_loss(rng):
    pred = _u(rng, 1, 2, 4, 4)
    target = T.Tensor(pred.data + _avoid_kinks(_u(rng, 1, 2, 4, 4)).data)
    return lambda p, t: T.l1_loss(p, t), [pred, target]


CASES = {
    "conv2d": _conv2d,
    "relu": _relu,
    "add": _add,
    "pixel_shuffle": _pixel_shuffle,
    "resample_bilinear_down": _resample_case("bilinear", "down"),
    "resample_bilinear_up": _resample_case("bilinear", "up"),
    "resample_avgpool_down": _resample_case("avgpool_nearest", "down"),
    "resample_nearest_up": _resample_case("avgpool_nearest", "up"),
    "resample_strided_down": _resample_case("strided_conv_deconv", "down"),
    "resample_strided_up": _resample_case("strided_conv_deconv", "up"),
    "scalewise_block": _scalewise_block,
    "l1_loss": _l1_loss,
}


def run_suite(seeds: int = SEEDS, tol: float = TOL, h: float = STEP, ops=None) -> list:
    """One entry per (operation, seed); an entry passes when every input's gradient does."""
    out = []
    for op in ops or CASES:
        for seed in range(seeds):
            rng = np.random.default_rng([seed, len(op)])
            f, inputs = CASES[op](rng)
            rep = T.grad_check(f, inputs, h=h, tol=tol)
            out.append(SuiteEntry(op, seed, rep.passed, rep.max_rel_error))
    return out
