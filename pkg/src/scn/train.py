"""Optimization, training loop, evaluation and self-ensembling."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DegradationSpec,
    ImagePair,
    augment,
    crop_pair,
    degrade,
    dihedral,
    dihedral_inverse,
    list_images,
    load_image,
    patch_offsets,
    stack_pairs,
)
from .errors import ConfigError, DatasetError, TrainingError
from .metrics import psnr, rgb_to_y, ssim
from .models import ModelConfig, WeightStore, forward, init_model
from .resample import as_ratio, bicubic_resize

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(w: WeightStore, grads: dict, state: OptimState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    missing = [name for name in w if grads.get(name) is None]
    if missing:
        raise TrainingError(f"no gradient for {len(missing)} parameters, e.g. {missing[0]}")
    state.t += 1
    c1 = 1 - BETA1**state.t
    c2 = 1 - BETA2**state.t
    for name in w:
        p = w[name].data
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= BETA1
        m += (1 - BETA1) * g
        v *= BETA2
        v += (1 - BETA2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + EPS)).astype(p.dtype)


def lr_at(epoch: int, base: float = 1e-3, decay_start: int = 25, every: int = 3) -> float:
    """Constant ``base`` through ``decay_start``, then halved every ``every`` epochs."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-based, got {epoch}")
    return base * 0.5 ** max(0, (epoch - decay_start) // every)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    names: list
    psnr: list
    ssim: list
    eval_n_scales: int | None = None
    eval_ratio: str | None = None
    self_ensemble: bool = False

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def rows(self) -> list:
        rows = [(n, p, s) for n, p, s in zip(self.names, self.psnr, self.ssim)]
        rows.append(("mean", self.mean_psnr, self.mean_ssim))
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["image", "psnr_db", "ssim"])
            for n, p, s in self.rows():
                wr.writerow([n, f"{p:.6f}", f"{s:.6f}"])

    def format_table(self) -> str:
        head = f"scales={self.eval_n_scales} ratio={self.eval_ratio} self_ensemble={self.self_ensemble}"
        lines = [head, f"{'image':<24} {'psnr_db':>10} {'ssim':>8}"]
        lines += [f"{n:<24} {p:>10.4f} {s:>8.4f}" for n, p, s in self.rows()]
        return "\n".join(lines)


def self_ensemble(fn, img: T.Tensor) -> T.Tensor:
    """Average ``fn`` over the 8 dihedral transforms of ``img``, each mapped back."""
    acc = None
    with T.no_grad():
        for idx in range(8):
            out = fn(T.Tensor(dihedral(img.data, idx))).data
            back = dihedral_inverse(out, idx).astype(np.float64)
            acc = back if acc is None else acc + back
    return T.Tensor((acc / 8).astype(img.dtype))


def _luma(x: np.ndarray) -> np.ndarray:
    """Evaluation channel on the 0-255 scale: Y for colour, the plane itself for gray."""
    return rgb_to_y(x) if x.shape[1] == 3 else x.astype(np.float64) * 255.0


def score(pred: np.ndarray, target: np.ndarray, border: int = 0) -> tuple:
    """(PSNR dB, SSIM) on the luma channel after cropping ``border`` pixels."""
    yp, yt = _luma(np.clip(pred, 0, 1)), _luma(target)
    if border:
        yp = yp[..., border:-border, border:-border]
        yt = yt[..., border:-border, border:-border]
    return psnr(yp, yt, max_val=255.0), ssim(yp / 255.0, yt / 255.0, data_range=1.0)


def evaluate_predictions(predict, pairs, border: int = 0, **report_fields) -> EvalReport:
    names, ps, ss = [], [], []
    for k, pair in enumerate(pairs):
        with T.no_grad():
            pred = predict(pair.degraded)
        p, s = score(pred.data, pair.target.data, border)
        names.append(str(pair.meta.get("source") or f"image{k}"))
        ps.append(p)
        ss.append(s)
    return EvalReport(names, ps, ss, **report_fields)


def default_border(cfg: ModelConfig) -> int:
    return cfg.factor if cfg.task == "super_resolution" else 0


def evaluate(
    cfg: ModelConfig,
    w: WeightStore,
    pairs,
    n_scales: int | None = None,
    ratio=None,
    use_self_ensemble: bool = False,
    border_crop: int | None = None,
) -> EvalReport:
    """Score a model on pairs, optionally with an evaluation-time pyramid."""
    n = cfg.n_scales if n_scales is None else n_scales
    r = cfg.ratio if ratio is None else ratio

    def fn(x):
        return forward(cfg, w, x, n_scales=n, ratio=r)

    predict = (lambda x: self_ensemble(fn, x)) if use_self_ensemble else fn
    border = default_border(cfg) if border_crop is None else border_crop
    rr = as_ratio(r)
    return evaluate_predictions(
        predict, pairs, border, eval_n_scales=n, eval_ratio=f"{rr.numerator}/{rr.denominator}", self_ensemble=use_self_ensemble
    )


def bicubic_baseline(pairs, factor: int, border_crop: int | None = None) -> EvalReport:
    def up(x):
        h, w = x.shape[2:]
        return bicubic_resize(x, h * factor, w * factor)

    return evaluate_predictions(up, pairs, factor if border_crop is None else border_crop)


def degradation_for(cfg: ModelConfig, sigma: float = 25.0, pairs_dir=None) -> DegradationSpec:
    if cfg.task == "super_resolution":
        return DegradationSpec("sr_bicubic", factor=cfg.factor)
    if cfg.task == "denoise":
        return DegradationSpec("gaussian_noise", sigma=sigma)
    if pairs_dir is None:
        raise ConfigError("artifact removal needs a directory of precomputed degraded images")
    return DegradationSpec("precomputed_pairs", directory=str(pairs_dir))


def load_pairs(paths, spec: DegradationSpec, in_channels: int, seed: int = 0) -> list:
    """Load clean images and build deterministic evaluation pairs."""
    pairs = []
    for k, path in enumerate(paths):
        img = load_image(path)
        if img.shape[1] != in_channels:
            img = convert_channels(img, in_channels)
        pair = degrade(img, spec, seed=seed * 100003 + k, name=Path(path).name)
        pairs.append(pair)
    return pairs


def convert_channels(img: T.Tensor, channels: int) -> T.Tensor:
    if channels == 1:
        # luma in [0, 1] for gray tasks fed colour images
        return T.Tensor((rgb_to_y(img.data) / 255.0).astype(np.float32))
    return T.Tensor(np.repeat(img.data, 3, axis=1))


def eval_run(
    ckpt,
    dataset,
    eval_n_scales: int | None = None,
    eval_ratio=None,
    use_self_ensemble: bool = False,
    border_crop: int | None = None,
    sigma: float = 25.0,
    pairs_dir=None,
    seed: int = 0,
) -> EvalReport:
    w, cfg = load_checkpoint(ckpt)
    spec = degradation_for(cfg, sigma, pairs_dir)
    pairs = load_pairs(list_images(dataset), spec, cfg.in_channels, seed)
    if not pairs:
        raise DatasetError(f"no PNG images in {dataset}")
    return evaluate(cfg, w, pairs, eval_n_scales, eval_ratio, use_self_ensemble, border_crop)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    data_dir: str | None = None
    epochs: int = 40
    patches_per_image: int = 1000
    patch: int = 48
    batch: int = 16
    seed: int = 0
    val_fraction: float = 0.1
    val_dir: str | None = None
    sigma: float = 25.0
    pairs_dir: str | None = None
    base_lr: float = 1e-3
    decay_start: int = 25
    decay_every: int = 3
    augment: bool = True
    validate: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    weights: WeightStore
    checkpoint: Path | None
    best_checkpoint: Path | None
    history: list
    steps: int


def split_paths(paths, val_fraction: float, seed: int) -> tuple:
    """Held-out split; with no room for a split the training images double as validation."""
    paths = list(paths)
    n_val = int(math.floor(len(paths) * val_fraction))
    if n_val == 0 or n_val >= len(paths):
        return paths, paths
    order = np.random.default_rng([seed, 7]).permutation(len(paths))
    val = sorted(paths[i] for i in order[:n_val])
    train = sorted(paths[i] for i in order[n_val:])
    return train, val


def prepare_data(cfg: ModelConfig, tcfg: TrainConfig) -> tuple:
    """(training pairs, validation pairs) read from ``tcfg.data_dir``.

    For denoising the training pairs hold the clean image on both sides; noise
    is drawn per patch during training. Validation pairs carry fixed noise.
    """
    if tcfg.data_dir is None:
        raise ConfigError("train needs data_dir or explicit pairs")
    spec = degradation_for(cfg, tcfg.sigma, tcfg.pairs_dir)
    paths = list_images(tcfg.data_dir)
    if not paths:
        raise DatasetError(f"no PNG images in {tcfg.data_dir}")
    if tcfg.val_dir:
        train_paths, val_paths = paths, list_images(tcfg.val_dir)
    else:
        train_paths, val_paths = split_paths(paths, tcfg.val_fraction, tcfg.seed)
    train_spec = DegradationSpec("gaussian_noise", sigma=0.0) if spec.kind == "gaussian_noise" else spec
    pairs = load_pairs(train_paths, train_spec, cfg.in_channels, tcfg.seed)
    return pairs, load_pairs(val_paths, spec, cfg.in_channels, tcfg.seed + 1)


def _epoch_plan(pairs, tcfg: TrainConfig, epoch: int) -> list:
    """(image index, y, x, dihedral idx, noise seed) per patch, shuffled; all seeded by (seed, epoch, image)."""
    plan = []
    for ii, pair in enumerate(pairs):
        rng = np.random.default_rng([tcfg.seed, epoch, ii])
        h, w = pair.degraded.shape[2:]
        offsets = patch_offsets(h, w, tcfg.patch, tcfg.patches_per_image, rng)
        augs = rng.integers(0, 8, size=len(offsets)) if tcfg.augment else np.zeros(len(offsets), int)
        noise_seeds = rng.integers(0, 2**31, size=len(offsets))
        plan += [(ii, y, x, int(a), int(s)) for (y, x), a, s in zip(offsets, augs, noise_seeds)]
    order = np.random.default_rng([tcfg.seed, epoch]).permutation(len(plan))
    return [plan[i] for i in order]


def _make_patch(pairs, item, tcfg: TrainConfig, noisy: bool) -> ImagePair:
    ii, y, x, a, s = item
    p = crop_pair(pairs[ii], y, x, tcfg.patch)
    if noisy:
        noise = np.random.default_rng(s).standard_normal(p.target.shape) * (tcfg.sigma / 255.0)
        p = ImagePair(T.Tensor((p.target.data + noise).astype(np.float32)), p.target, p.meta)
    return augment(p, a) if a else p


def train(
    cfg: ModelConfig,
    tcfg: TrainConfig,
    out_path=None,
    pairs: list | None = None,
    val_pairs: list | None = None,
    init: WeightStore | None = None,
    log_path=None,
) -> TrainResult:
    """Train ``cfg`` with L1 loss and Adam.

    Pairs come from ``tcfg.data_dir`` unless given directly; explicit pairs
    are used as they are, without online noise. Writes the final checkpoint
    to ``out_path`` and the best-validation one next to it.
    """
    noisy = False
    if pairs is None:
        pairs, loaded_val = prepare_data(cfg, tcfg)
        noisy = cfg.task == "denoise"
        if val_pairs is None and tcfg.validate:
            val_pairs = loaded_val
    if not pairs:
        raise DatasetError("empty training set")

    w = init if init is not None else init_model(cfg, tcfg.seed)
    w.requires_grad_(True)
    state = OptimState()
    history = []
    best = -math.inf
    out_path = Path(out_path) if out_path is not None else None
    best_path = out_path.with_name(out_path.stem + ".best" + out_path.suffix) if out_path else None
    log_file = open(log_path, "w") if log_path else None
    steps = 0
    try:
        for epoch in range(1, tcfg.epochs + 1):
            lr = lr_at(epoch, tcfg.base_lr, tcfg.decay_start, tcfg.decay_every)
            plan = _epoch_plan(pairs, tcfg, epoch)
            losses = []
            for start in range(0, len(plan), tcfg.batch):
                batch = [_make_patch(pairs, item, tcfg, noisy) for item in plan[start : start + tcfg.batch]]
                x, y = stack_pairs(batch)
                w.zero_grad()
                loss = T.l1_loss(forward(cfg, w, x), y)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss {value} at epoch {epoch}, step {steps}")
                loss.backward()
                grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in w.items()}
                adam_step(w, grads, state, lr)
                losses.append(value)
                steps += 1
            record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)) if losses else float("nan")}
            if val_pairs and tcfg.validate:
                record["val_psnr"] = evaluate(cfg, w, val_pairs).mean_psnr
            history.append(record)
            line = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items())
            log.info(line)
            if log_file:
                log_file.write(line + "\n")
                log_file.flush()
            if best_path is not None and record.get("val_psnr", -math.inf) > best:
                best = record["val_psnr"]
                save_checkpoint(w, cfg, best_path)
    finally:
        if log_file:
            log_file.close()
        w.requires_grad_(False)

    if out_path is not None:
        save_checkpoint(w, cfg, out_path)
        if best_path is not None and not best_path.exists():
            save_checkpoint(w, cfg, best_path)
    return TrainResult(w, out_path, best_path, history, steps)
