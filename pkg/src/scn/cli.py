"""``scn`` command line: train, eval, infer, gradcheck, ablate.

Run configs are JSON documents with a ``model`` section (ModelConfig fields),
a ``train`` section (TrainConfig fields) and, for ``ablate``, an optional
``ablation`` section. Unknown keys anywhere are errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ablation
from . import tensor as T
from .checkpoint import load_checkpoint
from .data import load_image, save_image
from .errors import ConfigError, SCNError
from .gradsuite import run_suite
from .models import ModelConfig, count_params, forward
from .train import TrainConfig, convert_channels, eval_run, self_ensemble, train

SECTIONS = ("model", "train", "ablation")


def load_config(path) -> tuple:
    """Parse a run config into (ModelConfig, TrainConfig, AblationConfig)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    try:
        model = ModelConfig.from_dict(doc.get("model", {}))
        tcfg = TrainConfig.from_dict(doc.get("train", {}))
        acfg = ablation.AblationConfig.from_dict(doc.get("ablation", {}))
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return model, tcfg, acfg


def _ratio_arg(text: str):
    # fractions like 2/3 stay exact; decimals go through as_ratio later
    return text if "/" in text else float(text)


def cmd_train(args) -> int:
    model, tcfg, _ = load_config(args.config)
    if args.data:
        tcfg.data_dir = args.data
    print(f"training {model.variant} ({count_params(model)} params) -> {args.out}")
    res = train(model, tcfg, out_path=args.out, log_path=args.log)
    last = res.history[-1] if res.history else {}
    print(f"done: {res.steps} steps, final loss {last.get('loss', float('nan')):.6g}")
    return 0


def cmd_eval(args) -> int:
    rep = eval_run(
        args.ckpt,
        args.data,
        eval_n_scales=args.scales,
        eval_ratio=args.ratio,
        use_self_ensemble=args.self_ensemble,
        border_crop=args.border,
        sigma=args.sigma,
        pairs_dir=args.pairs_dir,
        seed=args.seed,
    )
    print(rep.format_table())
    csv_path = args.csv or Path(args.ckpt).with_suffix(".eval.csv")
    rep.to_csv(csv_path)
    print(f"wrote {csv_path}")
    return 0


def cmd_infer(args) -> int:
    w, cfg = load_checkpoint(args.ckpt)
    img = load_image(args.input)
    if img.shape[1] != cfg.in_channels:
        img = convert_channels(img, cfg.in_channels)

    def fn(x):
        return forward(cfg, w, x, n_scales=args.scales, ratio=args.ratio)

    with T.no_grad():
        out = self_ensemble(fn, img) if args.self_ensemble else fn(img)
    save_image(out, args.output)
    print(f"wrote {args.output} {tuple(out.shape[2:])}")
    return 0


def cmd_gradcheck(args) -> int:
    entries = run_suite(seeds=args.seeds)
    by_op = {}
    for e in entries:
        ok, worst = by_op.get(e.op, (True, 0.0))
        by_op[e.op] = (ok and e.passed, max(worst, e.max_rel_error))
    for op, (ok, worst) in by_op.items():
        print(f"{'PASS' if ok else 'FAIL'} {op:<24} max rel err {worst:.2e}")
    failed = [op for op, (ok, _) in by_op.items() if not ok]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(by_op)} operations pass over {args.seeds} seeds")
    return 0


def cmd_ablate(args) -> int:
    model, tcfg, acfg = load_config(args.config)
    if args.data:
        tcfg.data_dir = args.data
    rows = ablation.run(args.experiment, model, tcfg, acfg)
    print(ablation.format_rows(rows))
    if args.csv:
        ablation.write_csv(rows, args.csv)
        print(f"wrote {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scn", description="Scale-wise convolution networks for image restoration.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="final checkpoint path; the best one goes next to it")
    t.add_argument("--data", help="override train.data_dir")
    t.add_argument("--log", help="per-epoch log file")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a directory of clean PNGs")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--scales", type=int, help="pyramid depth at evaluation (default: training value)")
    e.add_argument("--ratio", type=_ratio_arg, help="pyramid ratio at evaluation, e.g. 0.75 or 2/3")
    e.add_argument("--self-ensemble", action="store_true")
    e.add_argument("--border", type=int, help="pixels cropped before scoring (default: SR factor, else 0)")
    e.add_argument("--sigma", type=float, default=25.0, help="noise level for denoising models")
    e.add_argument("--pairs-dir", help="degraded counterparts for artifact removal")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--csv", help="per-image metrics (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="restore one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--scales", type=int)
    i.add_argument("--ratio", type=_ratio_arg)
    i.add_argument("--self-ensemble", action="store_true")
    i.set_defaults(func=cmd_infer)

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    g.add_argument("--seeds", type=int, default=5)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="run one of the structural ablations")
    a.add_argument("experiment", choices=ablation.EXPERIMENTS)
    a.add_argument("--config", required=True)
    a.add_argument("--data", help="override train.data_dir")
    a.add_argument("--csv", help="write the result table as CSV")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (SCNError, OSError) as e:
        print(f"scn {args.command}: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
