import csv
import math

import numpy as np
import pytest

from scn import tensor as T
from scn.checkpoint import load_checkpoint
from scn.data import DegradationSpec, ImagePair, degrade, dihedral, synthetic_image, write_synthetic_corpus
from scn.errors import ConfigError, ShapeError, TrainingError
from scn.metrics import gaussian_window, psnr, rgb_to_y, ssim
from scn.models import ModelConfig, WeightStore, init_model
from scn.train import (
    EvalReport,
    OptimState,
    TrainConfig,
    adam_step,
    bicubic_baseline,
    eval_run,
    evaluate,
    lr_at,
    self_ensemble,
    split_paths,
    train,
)

TINY = ModelConfig(n_blocks=1, width=4, width_mult=2, n_scales=2)


def ssim_brute(a, b, c1=1e-4, c2=9e-4):
    """Window-by-window SSIM with an explicit Gaussian weight table."""
    g = np.outer(gaussian_window(), gaussian_window())
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (g * pa).sum(), (g * pb).sum()
            va, vb = (g * (pa - ma) ** 2).sum(), (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestMetrics:
    def test_psnr_identical(self):
        a = np.random.default_rng(0).uniform(0, 1, (1, 1, 4, 4))
        assert psnr(a, a) == math.inf

    def test_psnr_one_level(self):
        a = np.full((1, 1, 8, 8), 0.5)
        assert psnr(a, a + 1 / 255) == pytest.approx(48.1308, abs=1e-3)
        assert psnr(a * 255, a * 255 + 1, max_val=255) == pytest.approx(48.1308, abs=1e-3)

    def test_psnr_zero_db(self):
        assert psnr(np.zeros((2, 2)), np.ones((2, 2))) == pytest.approx(0.0)

    def test_psnr_shape(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_ssim_identical(self):
        a = np.random.default_rng(1).uniform(0, 1, (16, 16))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_ssim_constant_shift(self):
        a = np.full((16, 16), 0.2)
        c1 = (0.01) ** 2
        mu_a, mu_b = 0.2, 0.7
        expected = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
        assert ssim(a, a + 0.5) == pytest.approx(expected, abs=1e-4)

    def test_ssim_matches_brute_force(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, (14, 13))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_brute(a, b), abs=1e-10)

    def test_ssim_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(0, 1, (12, 12)), rng.uniform(0, 1, (12, 12))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_ssim_errors(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((10, 10)), np.zeros((10, 10)))
        with pytest.raises(ShapeError):
            ssim(np.zeros((1, 3, 12, 12)), np.zeros((1, 3, 12, 12)))

    def test_luma(self):
        img = np.ones((1, 3, 1, 3))
        img[..., 1] = 0.0
        img[..., 2] = 0.5
        y = rgb_to_y(img)
        assert y.shape == (1, 1, 1, 3)
        assert y[0, 0, 0].tolist() == pytest.approx([235.0, 16.0, 125.5])
        with pytest.raises(ShapeError):
            rgb_to_y(np.zeros((1, 1, 2, 2)))


class TestLoss:
    def test_values(self):
        z = T.tensor([[[[0.0, 0.0]]]])
        assert T.l1_loss(z, z).item() == 0.0
        assert T.l1_loss(z, T.tensor([[[[1.0, -1.0]]]])).item() == 1.0

    def test_gradient(self):
        p = T.Tensor(np.array([2.0]).reshape(1, 1, 1, 1), requires_grad=True)
        T.l1_loss(p, T.Tensor(np.ones((1, 1, 1, 1)))).backward()
        assert p.grad.ravel().tolist() == [1.0]


class TestAdam:
    def test_single_step(self):
        w = WeightStore({"p": np.zeros(1)})
        st = OptimState()
        adam_step(w, {"p": np.ones(1)}, st, 1e-3)
        assert w["p"].data[0] == pytest.approx(-1e-3, rel=1e-6)
        assert st.t == 1

    def test_zero_grads(self):
        w = WeightStore({"p": np.array([0.3, -0.2])})
        st = OptimState()
        adam_step(w, {"p": np.zeros(2)}, st, 1e-3)
        assert w["p"].data.tolist() == [0.3, -0.2]
        assert st.t == 1

    def test_identical_trajectories(self):
        w = WeightStore({"a": np.array([1.0]), "b": np.array([1.0])})
        st = OptimState()
        for g in (0.5, -2.0, 0.1):
            adam_step(w, {"a": np.array([g]), "b": np.array([g])}, st, 1e-2)
        assert w["a"].data[0] == w["b"].data[0]

    def test_missing_grad(self):
        w = WeightStore({"a": np.zeros(1)})
        with pytest.raises(TrainingError):
            adam_step(w, {}, OptimState(), 1e-3)


class TestSchedule:
    def test_values(self):
        assert lr_at(10) == 0.001
        assert lr_at(25) == 0.001
        assert lr_at(27) == 0.001
        assert lr_at(28) == 0.0005
        assert lr_at(40) == 3.125e-05

    def test_one_based(self):
        with pytest.raises(ValueError):
            lr_at(0)


def sr_pairs(n=2, size=16, seed=0):
    return [
        degrade(T.Tensor(synthetic_image(size, 3, seed=seed + i)[None]), DegradationSpec("sr_bicubic", factor=2), name=f"p{i}")
        for i in range(n)
    ]


class TestTrain:
    def test_zero_epochs_is_init(self, tmp_path):
        tcfg = TrainConfig(epochs=0, patch=4, batch=2, seed=3)
        res = train(TINY, tcfg, out_path=tmp_path / "m.scnw", pairs=sr_pairs())
        w, cfg = load_checkpoint(res.checkpoint)
        init = init_model(TINY, seed=3)
        assert cfg == TINY and res.steps == 0
        for name in init:
            np.testing.assert_array_equal(w[name].data, init[name].data)

    def test_tiny_run_deterministic(self, tmp_path):
        tcfg = TrainConfig(epochs=1, patches_per_image=8, patch=4, batch=4, seed=1, validate=False)
        a = train(TINY, tcfg, out_path=tmp_path / "a.scnw", pairs=sr_pairs(1))
        b = train(TINY, tcfg, out_path=tmp_path / "b.scnw", pairs=sr_pairs(1))
        assert a.steps == 2
        assert (tmp_path / "a.scnw").read_bytes() == (tmp_path / "b.scnw").read_bytes()

    def test_constant_offset_denoise(self):
        cfg = ModelConfig(task="denoise", n_blocks=1, width=4, width_mult=2, n_scales=2)
        rng = np.random.default_rng(0)
        pairs = []
        for _ in range(4):
            x = rng.uniform(0, 0.8, (1, 1, 16, 16)).astype(np.float32)
            pairs.append(ImagePair(T.Tensor(x), T.Tensor(x + np.float32(0.1))))
        tcfg = TrainConfig(epochs=10, patches_per_image=20, patch=8, batch=4, seed=0, validate=False, augment=False)
        res = train(cfg, tcfg, pairs=pairs)
        assert res.steps == 200
        assert res.history[-1]["loss"] < 0.01

    def test_from_directory_with_logs(self, tmp_path):
        write_synthetic_corpus(tmp_path / "data", 3, size=16)
        tcfg = TrainConfig(data_dir=str(tmp_path / "data"), epochs=2, patches_per_image=4, patch=4, batch=4, val_fraction=0.34)
        res = train(TINY, tcfg, out_path=tmp_path / "m.scnw", log_path=tmp_path / "log.txt")
        lines = (tmp_path / "log.txt").read_text().splitlines()
        assert len(lines) == 2 and "val_psnr=" in lines[0]
        assert res.best_checkpoint.exists()
        report = eval_run(res.checkpoint, tmp_path / "data")
        assert len(report.names) == 3

    def test_denoise_from_directory(self, tmp_path):
        write_synthetic_corpus(tmp_path / "data", 2, size=16, channels=1)
        cfg = ModelConfig(task="denoise", n_blocks=1, width=4, width_mult=2)
        tcfg = TrainConfig(data_dir=str(tmp_path / "data"), epochs=1, patches_per_image=4, patch=8, batch=4, sigma=15)
        res = train(cfg, tcfg)
        assert res.steps == 2 and "val_psnr" in res.history[0]

    def test_non_finite_loss(self):
        w = init_model(TINY)
        w["tail.bias"] = T.Tensor(np.full(w["tail.bias"].shape, np.inf, dtype=np.float32))
        with pytest.raises(TrainingError):
            train(TINY, TrainConfig(epochs=1, patches_per_image=2, patch=4, batch=2, validate=False), pairs=sr_pairs(1), init=w)

    def test_needs_data(self):
        with pytest.raises(ConfigError):
            train(TINY, TrainConfig(epochs=1))

    def test_split(self):
        paths = [f"{i}.png" for i in range(10)]
        tr, va = split_paths(paths, 0.2, seed=0)
        assert len(va) == 2 and not set(tr) & set(va) and sorted(tr + va) == paths
        assert split_paths(paths[:3], 0.1, 0) == (paths[:3], paths[:3])

    def test_config_dict(self):
        tcfg = TrainConfig(epochs=3)
        assert TrainConfig.from_dict(tcfg.to_dict()) == tcfg
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"epoch": 3})


class TestEvaluate:
    def test_self_ensemble_identity(self):
        x = T.Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 5, 7)))
        np.testing.assert_allclose(self_ensemble(lambda t: t, x).data, x.data, atol=1e-12)

    def test_self_ensemble_sr_identity(self):
        x = T.Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 4, 6)))
        up = lambda t: T.Tensor(t.data.repeat(2, 2).repeat(2, 3))
        np.testing.assert_allclose(self_ensemble(up, x).data, up(x).data, atol=1e-12)

    def test_self_ensemble_of_equivariant_model(self):
        x = T.Tensor(np.random.default_rng(2).uniform(0, 1, (1, 1, 6, 6)))
        square = lambda t: T.Tensor(t.data**2 + 0.1)
        np.testing.assert_allclose(self_ensemble(square, x).data, square(x).data, atol=1e-12)

    def test_self_ensemble_averages(self):
        # a model that only sees the top-left pixel gets averaged over all corners
        x = T.Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
        corner = lambda t: T.Tensor(np.full(t.shape, t.data[0, 0, 0, 0]))
        expected = np.mean([dihedral(x.data, i)[0, 0, 0, 0] for i in range(8)])
        np.testing.assert_allclose(self_ensemble(corner, x).data, expected)

    def test_evaluate_and_csv(self, tmp_path):
        pairs = sr_pairs(2, size=28)
        w = init_model(TINY)
        report = evaluate(TINY, w, pairs, n_scales=1)
        assert isinstance(report, EvalReport) and report.names == ["p0", "p1"]
        assert report.eval_n_scales == 1 and report.eval_ratio == "1/2"
        report.to_csv(tmp_path / "r.csv")
        rows = list(csv.reader(open(tmp_path / "r.csv")))
        assert rows[0] == ["image", "psnr_db", "ssim"] and rows[-1][0] == "mean"
        assert float(rows[-1][1]) == pytest.approx(report.mean_psnr, abs=1e-5)
        assert "mean" in report.format_table()

    def test_eval_matches_logged_validation(self, tmp_path):
        write_synthetic_corpus(tmp_path / "d", 2, size=28)
        tcfg = TrainConfig(data_dir=str(tmp_path / "d"), val_dir=str(tmp_path / "d"), epochs=1, patches_per_image=4, patch=6, batch=4)
        res = train(TINY, tcfg, out_path=tmp_path / "m.scnw")
        report = eval_run(res.checkpoint, tmp_path / "d", seed=tcfg.seed + 1)
        assert report.mean_psnr == res.history[-1]["val_psnr"]

    def test_bicubic_baseline_on_smooth_image(self):
        img = np.linspace(0, 1, 32 * 32).reshape(1, 1, 32, 32).repeat(3, axis=1).astype(np.float32)
        pair = degrade(T.Tensor(img), DegradationSpec("sr_bicubic", factor=2))
        assert bicubic_baseline([pair], 2).mean_psnr > 40
