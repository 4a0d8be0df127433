"""Image I/O, degradations, patch sampling and dihedral augmentation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import tensor as T
from .errors import ConfigError, DatasetError, FormatError
from .resample import bicubic_resize

NOISE_LEVELS = (15, 25, 50)


# ---------------------------------------------------------------------------
# PNG I/O


def load_image(path) -> T.Tensor:
    """Read an 8-bit grayscale or RGB PNG into a (1, c, h, w) tensor in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except FileNotFoundError:
        raise
    except UnidentifiedImageError as e:
        raise FormatError(f"{path}: not a readable image") from e
    if mode == "L":
        arr = arr[None]
    elif mode == "RGB":
        arr = arr.transpose(2, 0, 1)
    else:
        raise FormatError(f"{path}: unsupported PNG mode {mode!r}; need 8-bit L or RGB")
    if arr.dtype != np.uint8:
        raise FormatError(f"{path}: unsupported bit depth ({arr.dtype})")
    return T.Tensor((arr.astype(np.float32) / np.float32(255))[None])


def to_bytes(t) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-away-from-zero to uint8."""
    data = t.data if isinstance(t, T.Tensor) else np.asarray(t)
    v = np.clip(data.astype(np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def save_image(t: T.Tensor, path) -> None:
    data = t.data if isinstance(t, T.Tensor) else np.asarray(t)
    if data.ndim == 4:
        if data.shape[0] != 1:
            raise FormatError(f"save_image writes one image, got batch of {data.shape[0]}")
        data = data[0]
    c = data.shape[0]
    if c not in (1, 3):
        raise FormatError(f"save_image needs 1 or 3 channels, got {c}")
    b = to_bytes(data)
    img = Image.fromarray(b[0], mode="L") if c == 1 else Image.fromarray(b.transpose(1, 2, 0), mode="RGB")
    img.save(path, format="PNG")


def list_images(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"{directory}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")


# ---------------------------------------------------------------------------
# degradation


@dataclass
class ImagePair:
    degraded: T.Tensor
    target: T.Tensor
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DegradationSpec:
    """``kind`` is ``sr_bicubic``, ``gaussian_noise`` or ``precomputed_pairs``."""

    kind: str
    factor: int = 2
    sigma: float = 25.0
    directory: str | None = None

    def describe(self) -> str:
        if self.kind == "sr_bicubic":
            return f"sr_bicubic(x{self.factor})"
        if self.kind == "gaussian_noise":
            return f"gaussian_noise(sigma={self.sigma:g})"
        return f"precomputed_pairs({self.directory})"


def crop_to_multiple(img: T.Tensor, factor: int) -> T.Tensor:
    h, w = img.shape[2:]
    return T.Tensor(img.data[:, :, : h - h % factor, : w - w % factor])


def degrade(img: T.Tensor, spec: DegradationSpec, seed: int = 0, name: str | None = None) -> ImagePair:
    """Build an (input, target) pair from a clean image."""
    meta = {"degradation": spec.describe(), "source": name}
    if spec.kind == "sr_bicubic":
        target = crop_to_multiple(img, spec.factor)
        h, w = target.shape[2:]
        if h == 0 or w == 0:
            raise DatasetError(f"image {img.shape} smaller than factor {spec.factor}")
        low = bicubic_resize(target, h // spec.factor, w // spec.factor)
        return ImagePair(T.Tensor(np.clip(low.data, 0, 1)), target, meta)
    if spec.kind == "gaussian_noise":
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(img.shape) * (spec.sigma / 255.0)
        return ImagePair(T.Tensor((img.data + noise).astype(img.dtype)), img, meta)
    if spec.kind == "precomputed_pairs":
        if spec.directory is None or name is None:
            raise DatasetError("precomputed pairs need a directory and a file name")
        path = Path(spec.directory) / name
        if not path.exists():
            raise DatasetError(f"missing degraded counterpart {path}")
        degraded = load_image(path)
        if degraded.shape != img.shape:
            raise DatasetError(f"{path}: shape {degraded.shape} differs from target {img.shape}")
        return ImagePair(degraded, img, meta)
    raise ConfigError(f"unknown degradation {spec.kind!r}")


# ---------------------------------------------------------------------------
# patches and augmentation


def patch_offsets(h: int, w: int, patch: int, count: int, seed) -> list:
    if patch > h or patch > w:
        raise DatasetError(f"patch {patch} larger than image ({h}, {w})")
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, h - patch + 1, size=count)
    xs = rng.integers(0, w - patch + 1, size=count)
    return [(int(y), int(x)) for y, x in zip(ys, xs)]


def crop_pair(pair: ImagePair, y: int, x: int, patch: int) -> ImagePair:
    """Crop ``patch`` at (y, x) in the degraded image and the aligned target region."""
    r = pair.target.shape[2] // pair.degraded.shape[2]
    d = pair.degraded.data[:, :, y : y + patch, x : x + patch]
    t = pair.target.data[:, :, r * y : r * (y + patch), r * x : r * (x + patch)]
    return ImagePair(T.Tensor(d), T.Tensor(t), {**pair.meta, "offset": (y, x)})


def sample_patches(pair: ImagePair, patch: int, count: int, seed) -> list:
    """``count`` uniformly placed patches; deterministic under ``seed``."""
    if count == 0:
        return []
    h, w = pair.degraded.shape[2:]
    return [crop_pair(pair, y, x, patch) for y, x in patch_offsets(h, w, patch, count, seed)]


# dihedral element idx = 2 * rotations + flip; the transform rotates first, then flips
DIHEDRAL_INVERSE = (0, 1, 6, 3, 4, 5, 2, 7)


def _check_idx(idx: int) -> None:
    if not 0 <= idx < 8:
        raise ConfigError(f"dihedral index must be in 0..7, got {idx}")


def dihedral(arr: np.ndarray, idx: int) -> np.ndarray:
    """Apply dihedral element ``idx`` to the last two axes."""
    _check_idx(idx)
    out = np.rot90(arr, idx // 2, axes=(-2, -1))
    if idx % 2:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def dihedral_inverse(arr: np.ndarray, idx: int) -> np.ndarray:
    _check_idx(idx)
    return dihedral(arr, DIHEDRAL_INVERSE[idx])


def augment(pair: ImagePair, idx: int) -> ImagePair:
    return ImagePair(
        T.Tensor(dihedral(pair.degraded.data, idx)),
        T.Tensor(dihedral(pair.target.data, idx)),
        {**pair.meta, "augment": idx},
    )


def stack_pairs(pairs) -> tuple:
    """Batch a list of same-size pairs into (inputs, targets) tensors."""
    x = np.concatenate([p.degraded.data for p in pairs], axis=0)
    y = np.concatenate([p.target.data for p in pairs], axis=0)
    return T.Tensor(x), T.Tensor(y)


# ---------------------------------------------------------------------------
# synthetic corpus


def synthetic_image(size: int, channels: int = 3, seed: int = 0) -> np.ndarray:
    """A textured test image with structure at several spatial scales.

    Mixes oriented gratings over a range of frequencies, hard-edged shapes and
    smoothed noise. Returns a (channels, size, size) float32 array in [0, 1].
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    base = np.zeros((size, size))
    for _ in range(6):
        freq = rng.uniform(1.5, size / 5)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        base += amp * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    for _ in range(8):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.05, 0.3)
        val = rng.uniform(-0.6, 0.6)
        if rng.random() < 0.5:
            base += val * ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r)
        else:
            base += val * ((np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * 0.6))
    noise = rng.standard_normal((size, size))
    k = np.array([1, 4, 6, 4, 1], dtype=np.float64) / 16
    for ax in (0, 1):
        noise = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), ax, noise)
    base += 0.3 * noise
    base = (base - base.min()) / (base.max() - base.min() + 1e-12)
    if channels == 1:
        img = base[None]
    else:
        tint = rng.uniform(0.6, 1.0, size=(3, 1, 1))
        shift = rng.uniform(0.0, 0.2, size=(3, 1, 1))
        img = np.clip(base[None] * tint + shift * (1 - base[None]), 0, 1)
    return img.astype(np.float32)


def write_synthetic_corpus(directory, n: int, size: int = 48, channels: int = 3, seed: int = 0) -> list:
    """Write ``n`` synthetic PNGs to ``directory`` and return their paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i in range(n):
        p = Path(directory) / f"img_{i:03d}.png"
        save_image(T.Tensor(synthetic_image(size, channels, seed=seed * 1000 + i)[None]), p)
        paths.append(p)
    return paths
