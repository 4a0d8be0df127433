import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scn import tensor as T
from scn.errors import ConfigError
from scn.resample import (
    ResamplerKind,
    as_ratio,
    bicubic_resize,
    bilinear_resize,
    box_kernel,
    resample,
    scaled_size,
)

from conftest import rand, weighted_sum


def keys_cubic(t):
    """Keys cubic convolution kernel with a = -0.5, written out piecewise."""
    t = abs(t)
    if t <= 1:
        return 1.5 * t**3 - 2.5 * t**2 + 1
    if t < 2:
        return -0.5 * t**3 + 2.5 * t**2 - 4 * t + 2
    return 0.0


def bilinear_point(img, y, x):
    """Independent scalar bilinear sampler with edge clamping."""
    h, w = img.shape
    y = min(max(y, 0), h - 1)
    x = min(max(x, 0), w - 1)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    ty, tx = y - y0, x - x0
    top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
    bot = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
    return top * (1 - ty) + bot * ty


class TestBilinear:
    def test_constant(self):
        x = T.create((1, 2, 7, 5), "constant", value=5.0, dtype=np.float64)
        for size in [(3, 2), (7, 5), (11, 13), (1, 1)]:
            np.testing.assert_allclose(bilinear_resize(x, *size).data, 5.0, atol=1e-12)

    def test_identity_size(self, rng):
        x = rand(rng, 1, 1, 4, 6)
        np.testing.assert_array_equal(bilinear_resize(x, 4, 6).data, x.data)

    def test_center_sample(self):
        x = T.tensor([[[[1, 2], [3, 4]]]], dtype=np.float64)
        out = bilinear_resize(x, 1, 1)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 2.5

    @pytest.mark.parametrize("size", [(3, 5), (9, 4), (2, 2)])
    def test_matches_pointwise_formula(self, rng, size):
        img = rng.uniform(0, 1, (5, 6))
        out = bilinear_resize(T.Tensor(img[None, None]), *size).data[0, 0]
        oh, ow = size
        for i in range(oh):
            for j in range(ow):
                sy = (i + 0.5) * 5 / oh - 0.5
                sx = (j + 0.5) * 6 / ow - 0.5
                assert out[i, j] == pytest.approx(bilinear_point(img, sy, sx), abs=1e-12)

    def test_linearity(self, rng):
        x, y = rand(rng, 1, 2, 6, 7), rand(rng, 1, 2, 6, 7)
        a, b = 0.7, -1.3
        lhs = bilinear_resize(T.Tensor(a * x.data + b * y.data), 4, 9).data
        rhs = a * bilinear_resize(x, 4, 9).data + b * bilinear_resize(y, 4, 9).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        m = rand(rng, 1, 2, 3, 4)
        rep = T.grad_check(lambda x: weighted_sum(bilinear_resize(x, 3, 4), m), [rand(rng, 1, 2, 5, 7)], tol=1e-4)
        assert rep.passed


class TestBicubic:
    def test_constant(self):
        x = T.create((1, 3, 8, 8), "constant", value=0.3, dtype=np.float64)
        np.testing.assert_allclose(bicubic_resize(x, 4, 4).data, 0.3, atol=1e-12)
        np.testing.assert_allclose(bicubic_resize(x, 13, 5).data, 0.3, atol=1e-12)

    def test_identity_size(self, rng):
        x = rand(rng, 1, 1, 4, 4)
        np.testing.assert_array_equal(bicubic_resize(x, 4, 4).data, x.data)

    def test_ramp_closed_form(self):
        ramp = [0.0, 1.0, 2.0, 3.0]
        x = T.tensor(np.array(ramp).reshape(1, 1, 1, 4), dtype=np.float64)
        out = bicubic_resize(x, 1, 2).data[0, 0, 0]

        def by_hand(src):
            base = int(np.floor(src))
            return sum(ramp[min(max(t, 0), 3)] * keys_cubic(src - t) for t in range(base - 1, base + 3))

        assert out[0] == pytest.approx(by_hand(0.5), abs=1e-12)
        assert out[1] == pytest.approx(by_hand(2.5), abs=1e-12)
        # frozen from the hand evaluation above
        assert out[0] == pytest.approx(0.4375, abs=1e-12)
        assert out[1] == pytest.approx(2.5625, abs=1e-12)


class TestRatios:
    def test_parse(self):
        assert as_ratio("2/3") == as_ratio(2 / 3).limit_denominator(10)
        assert as_ratio(0.75).denominator == 4
        assert as_ratio(0.33).numerator == 33
        with pytest.raises(ConfigError):
            as_ratio(1.0)

    def test_size_rule(self):
        assert scaled_size(9, "2/3") == 6
        assert scaled_size(6, "2/3") == 4
        assert scaled_size(9, "1/2") == 5  # 4.5 rounds away from zero
        assert scaled_size(1, "1/2") == 1
        assert scaled_size(3, "1/4") == 1


class TestResample:
    def test_bilinear_round_trip_constant(self):
        x = T.create((1, 2, 9, 9), "constant", value=2.0, dtype=np.float64)
        down = resample("bilinear", "down", x, "2/3", (6, 6))
        up = resample("bilinear", "up", down, "2/3", (9, 9))
        np.testing.assert_allclose(up.data, 2.0, atol=1e-12)

    def test_avgpool_nearest_values(self):
        x = T.tensor([[[[1, 2], [3, 4]]]], dtype=np.float64)
        down = resample("avgpool_nearest", "down", x, "1/2", (1, 1))
        assert down.item() == 2.5
        up = resample("avgpool_nearest", "up", down, "1/2", (2, 2))
        np.testing.assert_array_equal(up.data, np.full((1, 1, 2, 2), 2.5))

    def test_strided_rejects_non_integer_stride(self):
        x = T.zeros((1, 1, 6, 6))
        with pytest.raises(ConfigError):
            resample("strided_conv_deconv", "down", x, "2/3", (4, 4), T.zeros((1, 1, 2, 2)))
        with pytest.raises(ConfigError):
            resample("avgpool_nearest", "down", x, "2/3", (4, 4))

    def test_strided_needs_kernel(self):
        with pytest.raises(ConfigError):
            resample("strided_conv_deconv", "down", T.zeros((1, 1, 4, 4)), "1/2", (2, 2))

    @pytest.mark.parametrize("stride", [2, 3])
    def test_strided_box_kernel_equals_avgpool_nearest(self, rng, stride):
        c, n = 3, 4 * stride
        x = rand(rng, 2, c, n, n)
        ratio = f"1/{stride}"
        small = (n // stride, n // stride)
        down_box = T.Tensor(box_kernel(c, stride, "down", dtype=np.float64))
        up_box = T.Tensor(box_kernel(c, stride, "up", dtype=np.float64))
        a = resample("strided_conv_deconv", "down", x, ratio, small, down_box)
        b = resample("avgpool_nearest", "down", x, ratio, small)
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)
        a = resample("strided_conv_deconv", "up", b, ratio, (n, n), up_box)
        c_ = resample("avgpool_nearest", "up", b, ratio, (n, n))
        np.testing.assert_allclose(a.data, c_.data, atol=1e-12)

    def test_constants_preserved_all_kinds(self):
        x = T.create((1, 2, 8, 8), "constant", value=1.5, dtype=np.float64)
        kernels = {
            "down": T.Tensor(box_kernel(2, 2, "down", dtype=np.float64)),
            "up": T.Tensor(box_kernel(2, 2, "up", dtype=np.float64)),
        }
        for kind in ResamplerKind:
            d = resample(kind, "down", x, "1/2", (4, 4), kernels["down"])
            u = resample(kind, "up", d, "1/2", (8, 8), kernels["up"])
            np.testing.assert_allclose(d.data, 1.5, atol=1e-12)
            np.testing.assert_allclose(u.data, 1.5, atol=1e-12)

    @pytest.mark.parametrize("kind", list(ResamplerKind))
    def test_exact_target_sizes(self, rng, kind):
        # odd sizes force the rounding rule; every kind must land on the recorded size
        x = rand(rng, 1, 2, 9, 7)
        kd = T.Tensor(box_kernel(2, 2, "down", dtype=np.float64))
        ku = T.Tensor(box_kernel(2, 2, "up", dtype=np.float64))
        target = (scaled_size(9, "1/2"), scaled_size(7, "1/2"))
        d = resample(kind, "down", x, "1/2", target, kd)
        assert d.shape[2:] == target
        assert resample(kind, "up", d, "1/2", (9, 7), ku).shape[2:] == (9, 7)

    @settings(max_examples=30, deadline=None)
    @given(h=st.integers(1, 8), w=st.integers(1, 8))
    def test_avgpool_after_nearest_is_identity(self, h, w):
        x = T.Tensor(np.random.default_rng(h * 31 + w).standard_normal((1, 2, h, w)))
        up = resample("avgpool_nearest", "up", x, "1/2", (2 * h, 2 * w))
        back = resample("avgpool_nearest", "down", up, "1/2", (h, w))
        np.testing.assert_allclose(back.data, x.data, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("kind", list(ResamplerKind))
    @pytest.mark.parametrize("direction", ["down", "up"])
    def test_gradcheck(self, seed, kind, direction):
        rng = np.random.default_rng(seed)
        if direction == "down":
            x, target = rand(rng, 1, 2, 7, 6), (4, 3)
        else:
            x, target = rand(rng, 1, 2, 4, 3), (7, 6)
        kw = rand(rng, 2, 2, 4, 4)
        m = rand(rng, 1, 2, *target)
        rep = T.grad_check(lambda x, k: weighted_sum(resample(kind, direction, x, "1/2", target, k), m), [x, kw], tol=1e-4)
        assert rep.entries[0].passed
        if kind is ResamplerKind.STRIDED:
            assert rep.entries[1].passed
