import csv
import json

import numpy as np
import pytest

from scn import ablation
from scn.checkpoint import load_checkpoint
from scn.cli import load_config, main
from scn.data import load_image, write_synthetic_corpus
from scn.errors import ConfigError
from scn.models import ModelConfig, count_params

MODEL = {"n_blocks": 1, "width": 4, "width_mult": 2, "n_scales": 2}
TRAIN = {"epochs": 1, "patches_per_image": 2, "patch": 4, "batch": 2, "val_fraction": 0.34}


@pytest.fixture
def corpus(tmp_path):
    write_synthetic_corpus(tmp_path / "data", 3, size=24)
    return tmp_path / "data"


def write_cfg(path, model=MODEL, train=TRAIN, **extra):
    path.write_text(json.dumps({"model": model, "train": train, **extra}))
    return path


def test_train_eval_infer(tmp_path, corpus, capsys):
    cfg = write_cfg(tmp_path / "cfg.json")
    ckpt = tmp_path / "m.scnw"
    assert main(["train", "--config", str(cfg), "--data", str(corpus), "--out", str(ckpt), "--log", str(tmp_path / "log")]) == 0
    assert ckpt.exists() and (tmp_path / "m.best.scnw").exists()
    _, mc = load_checkpoint(ckpt)
    assert mc == ModelConfig(**MODEL)

    out_csv = tmp_path / "r.csv"
    argv = ["eval", "--ckpt", str(ckpt), "--data", str(corpus), "--scales", "3", "--ratio", "0.75", "--self-ensemble", "--csv", str(out_csv)]
    assert main(argv) == 0
    printed = capsys.readouterr().out
    assert "scales=3 ratio=3/4 self_ensemble=True" in printed
    rows = list(csv.reader(open(out_csv)))
    assert len(rows) == 1 + 3 + 1

    out_png = tmp_path / "up.png"
    assert main(["infer", "--ckpt", str(ckpt), "--input", str(corpus / "img_000.png"), "--output", str(out_png)]) == 0
    assert load_image(out_png).shape == (1, 3, 48, 48)


def test_eval_default_csv_path(tmp_path, corpus):
    cfg = write_cfg(tmp_path / "cfg.json", train={**TRAIN, "epochs": 0})
    ckpt = tmp_path / "m.scnw"
    assert main(["train", "--config", str(cfg), "--data", str(corpus), "--out", str(ckpt)]) == 0
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(corpus), "--ratio", "2/3"]) == 0
    assert (tmp_path / "m.eval.csv").exists()


def test_infer_converts_to_gray(tmp_path, corpus):
    cfg = write_cfg(tmp_path / "cfg.json", model={**MODEL, "task": "denoise"}, train={**TRAIN, "epochs": 0})
    ckpt = tmp_path / "d.scnw"
    assert main(["train", "--config", str(cfg), "--data", str(corpus), "--out", str(ckpt)]) == 0
    assert main(["infer", "--ckpt", str(ckpt), "--input", str(corpus / "img_001.png"), "--output", str(tmp_path / "o.png")]) == 0
    assert load_image(tmp_path / "o.png").shape == (1, 1, 24, 24)


def test_gradcheck(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "PASS scalewise_block" in out and "FAIL" not in out


def test_ablate_resampling(tmp_path, corpus):
    cfg = write_cfg(tmp_path / "cfg.json")
    out = tmp_path / "abl.csv"
    assert main(["ablate", "resampling", "--config", str(cfg), "--data", str(corpus), "--csv", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["resampler"] for r in rows] == ["strided_conv_deconv", "avgpool_nearest", "bilinear"]


def test_ablate_eval_scales(tmp_path, corpus, capsys):
    cfg = write_cfg(tmp_path / "cfg.json", ablation={"eval_scales": [1, 3], "eval_ratios": ["1/2", 0.75]})
    assert main(["ablate", "eval-scales", "--config", str(cfg), "--data", str(corpus)]) == 0
    out = capsys.readouterr().out
    for label in ("eval_n1", "eval_n3", "eval_r1/2", "eval_r3/4"):
        assert label in out


@pytest.mark.parametrize(
    "argv_tail, message",
    [
        (["--config", "missing.json", "--out", "x"], "missing.json"),
    ],
)
def test_missing_config(tmp_path, capsys, argv_tail, message):
    assert main(["train", *argv_tail]) == 1
    err = capsys.readouterr().err
    assert message in err and len(err.strip().splitlines()) == 1


def test_bad_configs(tmp_path, capsys):
    bad = [
        {"model": {"widht": 3}},
        {"modle": {}},
        {"model": {"variant": "single_scale", "n_scales": 3}},
        {"train": {"epoch": 2}},
        {"ablation": {"scale": [1]}},
    ]
    for k, doc in enumerate(bad):
        p = tmp_path / f"c{k}.json"
        p.write_text(json.dumps(doc))
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "m")]) == 1
        with pytest.raises(ConfigError):
            load_config(p)
    (tmp_path / "junk.json").write_text("{nope")
    assert main(["train", "--config", str(tmp_path / "junk.json"), "--out", "m"]) == 1
    assert "invalid JSON" in capsys.readouterr().err


def test_unknown_flag_and_subcommand(capsys):
    assert main(["train", "--bogus"]) != 0
    assert main(["dance"]) != 0
    assert main([]) != 0


def test_corrupt_checkpoint(tmp_path, corpus, capsys):
    (tmp_path / "bad.scnw").write_bytes(b"nope")
    assert main(["eval", "--ckpt", str(tmp_path / "bad.scnw"), "--data", str(corpus)]) == 1
    assert "magic" in capsys.readouterr().err


class TestAblationPlans:
    BASE = ModelConfig(n_blocks=8, width=16, width_mult=4, n_scales=2)

    def test_structures_budget(self):
        models = dict(ablation.plan("structures", self.BASE))
        target = count_params(models["scn"])
        for label in ("unet_style", "pspnet_style"):
            assert abs(count_params(models[label]) - target) <= 0.05 * target

    def test_sharing(self):
        models = dict(ablation.plan("sharing", self.BASE))
        target = count_params(models["shared"])
        assert abs(count_params(models["unshared"]) - target) <= 0.05 * target
        assert abs(count_params(models["baseline"]) - target) <= 0.05 * target
        assert count_params(models["unshared_large"]) > 1.5 * target

    def test_scales_grid(self):
        acfg = ablation.AblationConfig(scales=[1, 2, 3], ratios=["1/2", "2/3"])
        labels = [label for label, _ in ablation.plan("scales", self.BASE, acfg)]
        assert labels == ["single_scale", "n2_r1/2", "n3_r1/2", "n2_r2/3", "n3_r2/3"]

    def test_unknown(self):
        with pytest.raises(ConfigError):
            ablation.plan("depth", self.BASE)
