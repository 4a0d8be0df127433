"""SCN and the multi-scale baselines used in the ablations.

All variants share the head (3x3 conv into feature space) and the task
tail. Weights live in a :class:`WeightStore` keyed by dotted paths such as
``block3.q.+1.bias``.
"""

from __future__ import annotations

import dataclasses
import zlib
from collections.abc import MutableMapping
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .pyramid import BlockWeights, Conv, build_pyramid, collapse_largest, scalewise_residual_block
from .resample import ResamplerKind, as_ratio, box_kernel, integer_stride, resample, scaled_size

TASKS = ("super_resolution", "denoise", "artifact_removal")
VARIANTS = ("scn_shared", "scn_unshared", "unet_style", "pspnet_style", "single_scale")
SR_FACTORS = (2, 3, 4)


@dataclass(frozen=True)
class ModelConfig:
    task: str = "super_resolution"
    factor: int = 2
    n_scales: int = 2
    ratio: Fraction = Fraction(1, 2)
    n_blocks: int = 8
    width: int = 32
    width_mult: int = 4
    k: int = 1
    resampler: ResamplerKind = ResamplerKind.BILINEAR
    variant: str = "scn_shared"
    in_channels: int | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "ratio", as_ratio(self.ratio))
        set_(self, "resampler", ResamplerKind.parse(self.resampler))
        if self.in_channels is None:
            set_(self, "in_channels", 1 if self.task == "denoise" else 3)
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "super_resolution" and self.factor not in SR_FACTORS:
            raise ConfigError(f"super-resolution factor must be one of {SR_FACTORS}, got {self.factor}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 1 or 3, got {self.in_channels}")
        for name in ("n_scales", "n_blocks", "width", "width_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        if self.variant == "single_scale" and self.n_scales != 1:
            raise ConfigError("single_scale requires n_scales = 1")
        if self.variant in ("unet_style", "pspnet_style") and self.n_scales != 2:
            raise ConfigError(f"{self.variant} uses exactly 2 scales")
        if self.variant in ("unet_style", "pspnet_style") and self.n_blocks != 8:
            raise ConfigError(f"{self.variant} has a fixed 8-block layout")
        if self.resampler is not ResamplerKind.BILINEAR:
            integer_stride(self.ratio)

    @property
    def upscale(self) -> int:
        return self.factor if self.task == "super_resolution" else 1

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ratio"] = f"{self.ratio.numerator}/{self.ratio.denominator}"
        d["resampler"] = self.resampler.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class WeightStore(MutableMapping):
    """Parameter path -> Tensor, iterated in lexicographic order."""

    def __init__(self, entries=None):
        self._d: dict[str, T.Tensor] = {}
        for k, v in dict(entries or {}).items():
            self[k] = v

    def __getitem__(self, key):
        return self._d[key]

    def __setitem__(self, key, value):
        if not isinstance(value, T.Tensor):
            value = T.Tensor(value)
        self._d[key] = value

    def __delitem__(self, key):
        del self._d[key]

    def __iter__(self):
        return iter(sorted(self._d))

    def __len__(self):
        return len(self._d)

    def __repr__(self):
        return f"WeightStore({len(self)} tensors, {T.param_count(self)} params)"

    def requires_grad_(self, flag: bool = True) -> "WeightStore":
        for t in self._d.values():
            t.requires_grad = flag
            if not flag:
                t.grad = None
        return self

    def zero_grad(self) -> None:
        for t in self._d.values():
            t.grad = None

    def copy(self, dtype=None) -> "WeightStore":
        return WeightStore({k: T.Tensor(np.array(v.data, dtype=dtype or v.dtype)) for k, v in self._d.items()})


# ---------------------------------------------------------------------------
# parameter inventory


def _conv_spec(name: str, cout: int, cin: int, k: int, bias: bool = True) -> list:
    out = [(f"{name}.weight", (cout, cin, k, k), "he")]
    if bias:
        out.append((f"{name}.bias", (cout,), "zero"))
    return out


def _plain_block_spec(name: str, width: int, mult: int) -> list:
    return (
        _conv_spec(f"{name}.expand", width * mult, width, 3)
        + _conv_spec(f"{name}.reduce", width, width * mult, 3)
        + _conv_spec(f"{name}.proj", width, width, 1)
    )


def _strided_spec(name: str, width: int, stride: int, direction: str) -> list:
    return [(f"{name}.weight", (width, width, 2 * stride, 2 * stride), f"box_{direction}_{stride}")]


def parameter_spec(cfg: ModelConfig) -> list:
    """(path, shape, init) for every parameter of ``cfg``'s architecture."""
    c, w, m = cfg.in_channels, cfg.width, cfg.width_mult
    strided = cfg.resampler is ResamplerKind.STRIDED
    stride = integer_stride(cfg.ratio) if strided else 0
    spec = _conv_spec("head", w, c, 3)
    spec += _conv_spec("tail", c * cfg.upscale**2, w, 3)
    if cfg.task == "super_resolution":
        spec += _conv_spec("skip", c * cfg.factor**2, c, 5)

    if cfg.variant in ("scn_shared", "scn_unshared"):
        n, k = cfg.n_scales, cfg.k
        if strided:
            spec += _strided_spec("pyramid.down", w, stride, "down")
        for j in range(cfg.n_blocks):
            b = f"block{j}"
            if cfg.variant == "scn_shared":
                spec += _conv_spec(f"{b}.expand", w * m, w, 3) + _conv_spec(f"{b}.reduce", w, w * m, 3)
                for i in range(-k, k + 1):
                    spec += _conv_spec(f"{b}.q.{i:+d}", w, w, 1)
            else:
                for s in range(n):
                    spec += _conv_spec(f"{b}.s{s}.expand", w * m, w, 3)
                    spec += _conv_spec(f"{b}.s{s}.reduce", w, w * m, 3)
                    for i in range(-k, k + 1):
                        if 0 <= s + i < n:
                            spec += _conv_spec(f"{b}.s{s}.q.{i:+d}", w, w, 1)
            if strided:
                for i in range(-k, k + 1):
                    if i != 0:
                        spec += _strided_spec(f"{b}.h.{i:+d}", w, stride ** abs(i), "down" if i < 0 else "up")
    elif cfg.variant == "single_scale":
        for j in range(cfg.n_blocks):
            spec += _plain_block_spec(f"block{j}", w, m)
    elif cfg.variant == "unet_style":
        for name in ("enc0", "enc1", "enc2", "enc3", "dec0", "dec1", "dec2", "dec3"):
            spec += _plain_block_spec(name, w, m)
        spec += _conv_spec("fuse", w, 2 * w, 1)
        if strided:
            spec += _strided_spec("down", w, stride, "down") + _strided_spec("up", w, stride, "up")
    elif cfg.variant == "pspnet_style":
        for j in range(cfg.n_blocks):
            spec += _plain_block_spec(f"full{j}", w, m) + _plain_block_spec(f"half{j}", w, m)
        spec += _conv_spec("fuse", w, 2 * w, 1)
        if strided:
            spec += _strided_spec("down", w, stride, "down") + _strided_spec("up", w, stride, "up")
    return spec


def count_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in parameter_spec(cfg))


RESIDUAL_INIT_SCALE = 0.1


def _is_residual_output(name: str) -> bool:
    # last layer of every residual branch plus the tail; keeps the initial map close to the skip path
    return name.startswith("tail.") or ".q." in name or ".proj." in name


def init_model(cfg: ModelConfig, seed: int = 0, dtype=T.DEFAULT_DTYPE) -> WeightStore:
    """Deterministic weights: He-normal convs, zero biases, box-filter strided kernels.

    Residual-branch output convs and the tail are He-normal scaled by
    ``RESIDUAL_INIT_SCALE``.

    Each tensor draws from a stream keyed by (seed, path), so a parameter's
    initial value does not depend on which other parameters exist.
    """
    store = WeightStore()
    for name, shape, init in parameter_spec(cfg):
        if init == "zero":
            data = np.zeros(shape, dtype=dtype)
        elif init == "he":
            stream = int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])
            data = T.create(shape, "he_normal", fan_in=int(np.prod(shape[1:])), seed=stream, dtype=dtype).data
            if _is_residual_output(name):
                data *= dtype(RESIDUAL_INIT_SCALE)
        else:
            _, direction, stride = init.split("_")
            data = box_kernel(shape[0], int(stride), direction, dtype=dtype)
        store[name] = T.Tensor(data)
    return store


# ---------------------------------------------------------------------------
# forward passes


def _conv(w: WeightStore, name: str) -> Conv:
    return Conv(w[f"{name}.weight"], w.get(f"{name}.bias"))


def plain_block(w: WeightStore, name: str, x: T.Tensor) -> T.Tensor:
    """Wide-activation residual block: x + proj(reduce(relu(expand(x))))."""
    y = _conv(w, f"{name}.reduce")(T.relu(_conv(w, f"{name}.expand")(x)))
    return T.add(x, _conv(w, f"{name}.proj")(y))


def block_weights(cfg: ModelConfig, w: WeightStore, j: int, n: int) -> BlockWeights:
    b = f"block{j}"
    h = {}
    for i in range(-cfg.k, cfg.k + 1):
        if f"{b}.h.{i:+d}.weight" in w:
            h[i] = w[f"{b}.h.{i:+d}.weight"]
    if cfg.variant == "scn_shared":
        q = {i: _conv(w, f"{b}.q.{i:+d}") for i in range(-cfg.k, cfg.k + 1)}
        return BlockWeights(_conv(w, f"{b}.expand"), _conv(w, f"{b}.reduce"), q, h)
    q = {
        (s, i): _conv(w, f"{b}.s{s}.q.{i:+d}")
        for s in range(n)
        for i in range(-cfg.k, cfg.k + 1)
        if 0 <= s + i < n
    }
    expand = [_conv(w, f"{b}.s{s}.expand") for s in range(n)]
    reduce = [_conv(w, f"{b}.s{s}.reduce") for s in range(n)]
    return BlockWeights(expand, reduce, q, h, shared=False)


def _tail(cfg: ModelConfig, w: WeightStore, feat: T.Tensor, img: T.Tensor) -> T.Tensor:
    out = _conv(w, "tail")(feat)
    if cfg.task == "super_resolution":
        r = cfg.factor
        return T.add(T.pixel_shuffle(out, r), T.pixel_shuffle(_conv(w, "skip")(img), r))
    return T.add(out, img)


def _check_input(cfg: ModelConfig, img: T.Tensor) -> None:
    if img.data.ndim != 4 or img.shape[1] != cfg.in_channels:
        raise ShapeError(f"model expects (b, {cfg.in_channels}, h, w) input, got {img.shape}")


def scn_forward(cfg: ModelConfig, w: WeightStore, img: T.Tensor, n_scales: int | None = None, ratio=None) -> T.Tensor:
    """Run SCN; ``n_scales``/``ratio`` override the training pyramid at evaluation."""
    _check_input(cfg, img)
    n = cfg.n_scales if n_scales is None else n_scales
    r = cfg.ratio if ratio is None else as_ratio(ratio)
    if cfg.variant == "scn_unshared" and n != cfg.n_scales:
        raise ConfigError("unshared SCN has per-scale weights; n_scales cannot change at evaluation")
    if cfg.resampler is not ResamplerKind.BILINEAR:
        integer_stride(r)
    feat = _conv(w, "head")(img)
    pyr = build_pyramid(feat, n, r, cfg.resampler, w.get("pyramid.down.weight"))
    for j in range(cfg.n_blocks):
        pyr = scalewise_residual_block(pyr, block_weights(cfg, w, j, pyr.n), cfg.k, cfg.resampler)
    return _tail(cfg, w, collapse_largest(pyr), img)


def _half_size(cfg, x):
    return scaled_size(x.shape[2], cfg.ratio), scaled_size(x.shape[3], cfg.ratio)


def baseline_forward(cfg: ModelConfig, w: WeightStore, img: T.Tensor) -> T.Tensor:
    _check_input(cfg, img)
    if cfg.variant in ("scn_shared", "scn_unshared"):
        return scn_forward(cfg, w, img)
    feat = _conv(w, "head")(img)
    kind = cfg.resampler

    if cfg.variant == "single_scale":
        for j in range(cfg.n_blocks):
            feat = plain_block(w, f"block{j}", feat)
        return _tail(cfg, w, feat, img)

    full_size = tuple(feat.shape[2:])
    down_w, up_w = w.get("down.weight"), w.get("up.weight")
    if cfg.variant == "unet_style":
        e = plain_block(w, "enc1", plain_block(w, "enc0", feat))
        d = resample(kind, "down", e, cfg.ratio, _half_size(cfg, e), down_w)
        d = plain_block(w, "enc3", plain_block(w, "enc2", d))
        d = plain_block(w, "dec1", plain_block(w, "dec0", d))
        u = resample(kind, "up", d, cfg.ratio, full_size, up_w)
        y = _conv(w, "fuse")(T.concat([e, u]))
        y = plain_block(w, "dec3", plain_block(w, "dec2", y))
        return _tail(cfg, w, y, img)

    # pspnet_style: independent towers, fused once at the end
    small = resample(kind, "down", feat, cfg.ratio, _half_size(cfg, feat), down_w)
    big = feat
    for j in range(cfg.n_blocks):
        big = plain_block(w, f"full{j}", big)
        small = plain_block(w, f"half{j}", small)
    u = resample(kind, "up", small, cfg.ratio, full_size, up_w)
    return _tail(cfg, w, _conv(w, "fuse")(T.concat([big, u])), img)


def forward(cfg: ModelConfig, w: WeightStore, img: T.Tensor, n_scales: int | None = None, ratio=None) -> T.Tensor:
    """Dispatch on ``cfg.variant``. Pyramid overrides only apply to SCN variants."""
    if cfg.variant in ("scn_shared", "scn_unshared"):
        return scn_forward(cfg, w, img, n_scales, ratio)
    return baseline_forward(cfg, w, img)


# ---------------------------------------------------------------------------
# budget matching and weight mapping


def match_budget(cfg: ModelConfig, target: int, lo: int = 1, hi: int | None = None, tol: float = 0.05) -> ModelConfig:
    """Return ``cfg`` resized so its parameter count is closest to ``target``.

    Width is tuned first. If no width lands within ``tol`` (one width step can
    move a small model by 10%), the expansion multiplier is searched as well.
    """
    hi = hi or 4 * cfg.width + 8

    def gap(wd, m):
        return abs(count_params(cfg.replace(width=wd, width_mult=m)) - target)

    wd = min(range(lo, hi + 1), key=lambda v: gap(v, cfg.width_mult))
    if gap(wd, cfg.width_mult) <= tol * target:
        return cfg.replace(width=wd)
    grid = [(v, m) for v in range(lo, hi + 1) for m in range(1, 2 * cfg.width_mult + 1)]
    wd, m = min(grid, key=lambda p: gap(*p))
    return cfg.replace(width=wd, width_mult=m)


def scn_to_single_scale(w: WeightStore, n_blocks: int) -> WeightStore:
    """Rename an ``n_scales = 1, k = 0`` SCN store into the single_scale layout."""
    out = WeightStore()
    for name, t in w.items():
        new = name
        for j in range(n_blocks):
            new = new.replace(f"block{j}.q.+0.", f"block{j}.proj.")
        out[new] = T.Tensor(t.data.copy())
    return out
