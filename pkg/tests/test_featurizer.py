import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spxrefine.featurizer import (
    CHANNELS,
    LinearProjection,
    N_CHANNELS,
    ShapeError,
    project_backward,
    project_forward,
    raw_channels,
    raw_feature_stack,
)

ENERGY_0 = CHANNELS.index("energy_0")
ENERGY_90 = CHANNELS.index("energy_90")
STD = CHANNELS.index("local_std5")


class TestFeatureStack:
    def test_shape_and_finite(self, rng):
        img = rng.integers(0, 256, size=(12, 17, 3)).astype(np.uint8)
        f = raw_feature_stack(img)
        assert f.shape == (N_CHANNELS, 12, 17) == (13, 12, 17)
        assert np.isfinite(f).all()

    def test_standardized(self, rng):
        f = raw_feature_stack(rng.integers(0, 256, size=(20, 20, 3)).astype(np.uint8))
        np.testing.assert_allclose(f.mean(axis=(1, 2)), 0, atol=1e-10)
        np.testing.assert_allclose(f.std(axis=(1, 2)), 1, atol=1e-10)

    def test_uniform_texture_channels_zero(self):
        raw = raw_channels(np.full((10, 10, 3), 77, np.uint8))
        assert (raw[6:] == 0).all()

    def test_vertical_step(self):
        img = np.zeros((16, 16, 3), np.uint8)
        img[:, 8:] = 255
        raw = raw_channels(img)
        e0 = raw[ENERGY_0]
        assert set(np.argmax(e0, axis=1)) <= {7, 8}
        assert (raw[ENERGY_90] == 0).all()

    def test_checkerboard_local_std_interior(self):
        cb = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
        img = np.repeat(cb[..., None], 3, axis=2)
        std = raw_channels(img)[STD]
        # brute-force 5x5 windows
        ref = np.array([[cb[y - 2 : y + 3, x - 2 : x + 3].std() for x in range(2, 14)] for y in range(2, 14)])
        np.testing.assert_allclose(std[2:14, 2:14], ref, atol=1e-12)
        assert np.ptp(std[2:14, 2:14]) < 1e-12

    def test_deterministic(self, rng):
        img = rng.integers(0, 256, size=(9, 9, 3)).astype(np.uint8)
        np.testing.assert_array_equal(raw_feature_stack(img), raw_feature_stack(img))

    def test_translation_covariance(self, rng):
        img = rng.integers(0, 256, size=(40, 40, 3)).astype(np.uint8)
        shifted = np.roll(img, 1, axis=1)
        a, b = raw_channels(img), raw_channels(shifted)
        # gradient channels farther than the kernel radius from the border and the wrapped column
        for c in range(6, 12):
            np.testing.assert_allclose(b[c, 12:28, 13:29], a[c, 12:28, 12:28], atol=1e-12)


class TestProjection:
    def test_identity(self, rng):
        x = rng.normal(size=(5, 4))
        p = LinearProjection(np.eye(4), np.zeros(4))
        np.testing.assert_array_equal(project_forward(x, p), x)

    def test_bias_only(self, rng):
        b = np.array([1.0, -2.0])
        out = project_forward(rng.normal(size=(3, 4)), LinearProjection(np.zeros((2, 4)), b))
        np.testing.assert_array_equal(out, np.tile(b, (3, 1)))

    def test_triple_loop_oracle(self, rng):
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)
        ref = np.zeros((3, 2))
        for i in range(3):
            for o in range(2):
                ref[i, o] = b[o] + sum(x[i, k] * w[o, k] for k in range(4))
        np.testing.assert_allclose(project_forward(x, LinearProjection(w, b)), ref, atol=1e-12)

    def test_mismatch(self, rng):
        with pytest.raises(ShapeError):
            project_forward(rng.normal(size=(3, 5)), LinearProjection.init(4, 2, 0))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, c):
        r = np.random.default_rng(seed)
        p = LinearProjection(r.normal(size=(3, 5)), np.zeros(3))
        x, y = r.normal(size=(4, 5)), r.normal(size=(4, 5))
        lhs = project_forward(a * x + c * y, p)
        rhs = a * project_forward(x, p) + c * project_forward(y, p)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_backward_zero(self, rng):
        p = LinearProjection.init(4, 3, 0)
        gw, gb, gx = project_backward(np.zeros((2, 3)), rng.normal(size=(2, 4)), p)
        assert not gw.any() and not gb.any() and not gx.any()

    def test_backward_scalar(self):
        p = LinearProjection(np.array([[3.0]]), np.array([0.5]))
        gw, gb, gx = project_backward(np.array([[2.0]]), np.array([[5.0]]), p)
        assert gw[0, 0] == 10.0 and gb[0] == 2.0 and gx[0, 0] == 6.0

    def test_backward_finite_differences(self):
        h = 1e-4
        for seed in range(20):
            r = np.random.default_rng(seed)
            p = LinearProjection(r.normal(size=(3, 4)), r.normal(size=3))
            x, g = r.normal(size=(5, 4)), r.normal(size=(5, 3))

            def loss(w, b, xx):
                return float((project_forward(xx, LinearProjection(w, b)) ** 2 * g).sum())

            out = project_forward(x, p)
            gw, gb, gx = project_backward(2 * out * g, x, p)
            for ana, arr, f in (
                (gw, p.weight, lambda a: loss(a, p.bias, x)),
                (gb, p.bias, lambda a: loss(p.weight, a, x)),
                (gx, x, lambda a: loss(p.weight, p.bias, a)),
            ):
                num = np.zeros_like(arr)
                for idx in np.ndindex(arr.shape):
                    up, dn = arr.copy(), arr.copy()
                    up[idx] += h
                    dn[idx] -= h
                    num[idx] = (f(up) - f(dn)) / (2 * h)
                rel = np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-12)
                assert rel < 1e-4
