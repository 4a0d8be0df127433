"""The five structural ablations, run at whatever scale the configs ask for.

Every experiment trains one or more models on the same data with the same
training config and reports held-out PSNR/SSIM per model. Models that are
compared against SCN get their width tuned to SCN's parameter budget.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

from .errors import ConfigError
from .models import ModelConfig, count_params, match_budget
from .resample import ResamplerKind, as_ratio
from .train import TrainConfig, evaluate, prepare_data, train

log = logging.getLogger(__name__)

EXPERIMENTS = ("structures", "sharing", "resampling", "scales", "eval-scales")


@dataclass
class AblationConfig:
    """Sweep values for the ``scales`` and ``eval-scales`` experiments."""

    scales: list = field(default_factory=lambda: [1, 2, 3, 4])
    ratios: list = field(default_factory=lambda: ["1/2", "2/3", "3/4"])
    eval_scales: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    eval_ratios: list = field(default_factory=lambda: ["1/2", "2/3", "3/4"])

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ablation config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AblationRow:
    label: str
    params: int
    psnr: float
    ssim: float
    model: ModelConfig
    eval_n_scales: int
    eval_ratio: str


def _ratio_str(r) -> str:
    r = as_ratio(r)
    return f"{r.numerator}/{r.denominator}"


def _matched(base: ModelConfig, variant: str, target: int) -> ModelConfig:
    n = 1 if variant == "single_scale" else base.n_scales
    return match_budget(base.replace(variant=variant, n_scales=n), target)


def plan(name: str, base: ModelConfig, acfg: AblationConfig | None = None) -> list:
    """(label, model config) pairs to train for experiment ``name``."""
    acfg = acfg or AblationConfig()
    target = count_params(base.replace(variant="scn_shared"))
    if name == "structures":
        base = base.replace(variant="scn_shared", n_scales=2, n_blocks=8)
        target = count_params(base)
        return [
            ("unet_style", _matched(base, "unet_style", target)),
            ("pspnet_style", _matched(base, "pspnet_style", target)),
            ("scn", base),
        ]
    if name == "sharing":
        shared = base.replace(variant="scn_shared")
        return [
            ("baseline", _matched(shared, "single_scale", target)),
            ("unshared", _matched(shared, "scn_unshared", target)),
            ("shared", shared),
            ("unshared_large", shared.replace(variant="scn_unshared")),
        ]
    if name == "resampling":
        base = base.replace(variant="scn_shared", ratio="1/2")
        return [(kind.value, base.replace(resampler=kind)) for kind in ResamplerKind]
    if name == "scales":
        out = []
        for r in acfg.ratios:
            for n in acfg.scales:
                if n == 1:
                    # ratio is irrelevant with one scale; keep a single baseline
                    cfg = _matched(base.replace(variant="scn_shared"), "single_scale", target)
                    label = "single_scale"
                else:
                    cfg = base.replace(variant="scn_shared", n_scales=n, ratio=r)
                    label = f"n{n}_r{_ratio_str(r)}"
                if all(c != cfg for _, c in out):
                    out.append((label, cfg))
        return out
    if name == "eval-scales":
        return [("trained", base.replace(variant="scn_shared"))]
    raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(EXPERIMENTS)}")


def run(name: str, base: ModelConfig, tcfg: TrainConfig, acfg: AblationConfig | None = None, pairs=None, val_pairs=None) -> list:
    """Train every model of the experiment and return one row per evaluation."""
    acfg = acfg or AblationConfig()
    models = plan(name, base, acfg)
    if pairs is None:
        pairs, loaded_val = prepare_data(base, tcfg)
        val_pairs = val_pairs or loaded_val
    if not val_pairs:
        raise ConfigError("ablation needs held-out pairs")
    rows = []
    for label, cfg in models:
        log.info("ablation %s: training %s (%d params)", name, label, count_params(cfg))
        w = train(cfg, dataclasses.replace(tcfg, validate=False), pairs=pairs).weights
        if name == "eval-scales":
            for n in acfg.eval_scales:
                rep = evaluate(cfg, w, val_pairs, n_scales=n)
                rows.append(AblationRow(f"eval_n{n}", count_params(cfg), rep.mean_psnr, rep.mean_ssim, cfg, n, rep.eval_ratio))
            for r in acfg.eval_ratios:
                rep = evaluate(cfg, w, val_pairs, ratio=r)
                rows.append(AblationRow(f"eval_r{_ratio_str(r)}", count_params(cfg), rep.mean_psnr, rep.mean_ssim, cfg, cfg.n_scales, rep.eval_ratio))
        else:
            rep = evaluate(cfg, w, val_pairs)
            rows.append(AblationRow(label, count_params(cfg), rep.mean_psnr, rep.mean_ssim, cfg, rep.eval_n_scales, rep.eval_ratio))
    return rows


def format_rows(rows) -> str:
    lines = [f"{'model':<20} {'params':>9} {'scales':>6} {'ratio':>6} {'psnr_db':>9} {'ssim':>7}"]
    for r in rows:
        lines.append(f"{r.label:<20} {r.params:>9} {r.eval_n_scales:>6} {r.eval_ratio:>6} {r.psnr:>9.4f} {r.ssim:>7.4f}")
    return "\n".join(lines)


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["model", "variant", "params", "width", "train_scales", "train_ratio", "resampler", "eval_scales", "eval_ratio", "psnr_db", "ssim"])
        for r in rows:
            m = r.model
            wr.writerow([
                r.label, m.variant, r.params, m.width, m.n_scales, _ratio_str(m.ratio), m.resampler.value,
                r.eval_n_scales, r.eval_ratio, f"{r.psnr:.6f}", f"{r.ssim:.6f}",
            ])
