import numpy as np
import pytest

from crwkv import numerics as N
from crwkv.oracles import naive_conv2d, naive_dft2, naive_linear


class TestLinear:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
        np.testing.assert_array_equal(N.linear(x, np.eye(3), np.zeros(3)), x)

    def test_diagonal_scaling(self):
        y = N.linear(np.ones((1, 2, 1, 1)), np.array([[2.0, 0], [0, 3.0]]), np.zeros(2))
        np.testing.assert_array_equal(y.ravel(), [2.0, 3.0])

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_naive_loop(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 4, 3))
        w = rng.standard_normal((3, 5))
        b = rng.standard_normal(5)
        np.testing.assert_allclose(N.linear(x, w, b), naive_linear(x, w, b), atol=1e-6)

    def test_shape_error_names_shapes(self):
        with pytest.raises(N.ShapeError, match=r"\(1, 4, 2, 2\).*\(3, 5\)"):
            N.linear(np.zeros((1, 4, 2, 2)), np.zeros((3, 5)))


class TestConv2d:
    def test_unit_kernel_identity(self):
        x = np.random.default_rng(1).standard_normal((1, 1, 5, 5))
        np.testing.assert_array_equal(N.conv2d(x, np.ones((1, 1, 1, 1))), x)

    def test_averaging_preserves_constant(self):
        x = np.full((1, 1, 6, 6), 2.5)
        y = N.conv2d(x, np.full((1, 1, 3, 3), 1 / 9), padding=1)
        np.testing.assert_allclose(y[0, 0, 1:-1, 1:-1], 2.5)

    @pytest.mark.parametrize("k,stride,padding", [(3, 1, 1), (3, 2, 1), (2, 2, 0), (1, 1, 0), (3, 1, 0)])
    def test_matches_naive_loop(self, k, stride, padding):
        rng = np.random.default_rng(k * 10 + stride)
        x = rng.standard_normal((2, 3, 7, 6))
        ker = rng.standard_normal((4, 3, k, k))
        b = rng.standard_normal(4)
        y = N.conv2d(x, ker, b, stride, padding)
        assert y.shape[2] == (7 + 2 * padding - k) // stride + 1
        np.testing.assert_allclose(y, naive_conv2d(x, ker, b, stride, padding), atol=1e-6)

    def test_parameter_errors(self):
        with pytest.raises(ValueError):
            N.conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), stride=0)
        with pytest.raises(ValueError):
            N.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)), padding=1)


class TestLayerNorm:
    def test_constant_vector_collapses_to_zero(self):
        y, _ = N.layer_norm(np.full((1, 4, 2, 2), 3.0), np.ones(4), np.zeros(4))
        np.testing.assert_array_equal(y, 0.0)

    def test_already_normalized(self):
        x = np.array([-1.0, 1.0]).reshape(1, 2, 1, 1)
        y, _ = N.layer_norm(x, np.ones(2), np.zeros(2), eps=0.0)
        np.testing.assert_allclose(y.ravel(), [-1.0, 1.0])

    def test_statistics(self):
        x = np.random.default_rng(2).standard_normal((3, 16, 5, 5)) * 4 + 1
        y, _ = N.layer_norm(x, np.ones(16), np.zeros(16))
        assert np.max(np.abs(y.mean(axis=1))) <= 1e-6
        assert np.max(np.abs(y.var(axis=1) - 1)) <= 1e-4


class TestFFT:
    def test_dc_only_spectrum(self):
        z = N.fft2d(np.full((1, 1, 4, 6), 2.0))
        assert z[0, 0, 0, 0] == pytest.approx(2.0 * 24)
        z[0, 0, 0, 0] = 0
        assert np.max(np.abs(z)) < 1e-12

    def test_roundtrip(self):
        x = np.random.default_rng(3).standard_normal((2, 3, 8, 5))
        back, residual = N.ifft2d(N.fft2d(x))
        assert np.max(np.abs(back - x)) / np.max(np.abs(x)) <= 1e-6
        assert residual < 1e-12

    def test_impulse_matches_naive_dft(self):
        x = np.zeros((4, 4))
        x[1, 2] = 1.0
        np.testing.assert_allclose(N.fft2d(x), naive_dft2(x), atol=1e-6)

    def test_random_matches_naive_dft(self):
        x = np.random.default_rng(4).standard_normal((4, 4))
        np.testing.assert_allclose(N.fft2d(x), naive_dft2(x), atol=1e-6)

    def test_parseval(self):
        x = np.random.default_rng(5).standard_normal((2, 2, 6, 8))
        lhs = np.sum(np.abs(N.fft2d(x)) ** 2)
        assert lhs == pytest.approx(48 * np.sum(x * x), rel=1e-5)


class TestActivations:
    def test_values(self):
        assert N.sigmoid(np.array([0.0]))[0] == 0.5
        np.testing.assert_array_equal(N.squared_relu(np.array([-3.0, 2.0])), [0.0, 4.0])
        assert N.leaky_relu(np.array([-1.0]), 0.2)[0] == pytest.approx(-0.2)

    def test_sigmoid_no_overflow(self):
        with np.errstate(over="raise"):
            s = N.sigmoid(np.array([-1000.0, 1000.0]))
        np.testing.assert_array_equal(s, [0.0, 1.0])


def test_pixel_shuffle_roundtrip():
    x = np.random.default_rng(6).standard_normal((2, 8, 3, 5))
    y = N.pixel_shuffle(x)
    assert y.shape == (2, 2, 6, 10)
    np.testing.assert_array_equal(N.pixel_unshuffle(y), x)


GRAD_MODULES = {
    "linear": (lambda r: N.Linear(3, 4, r, np.float64), (2, 3, 3, 2)),
    "conv3x3": (lambda r: N.Conv2d(2, 3, 3, r, padding=1, dtype=np.float64), (1, 2, 5, 4)),
    "conv_stride2": (lambda r: N.Conv2d(2, 4, 2, r, stride=2, dtype=np.float64), (2, 2, 4, 6)),
    "layer_norm": (lambda r: N.LayerNorm(5, np.float64), (2, 5, 3, 3)),
    "sigmoid": (lambda r: N.Sigmoid(), (1, 3, 4, 4)),
    "leaky_relu": (lambda r: N.LeakyReLU(), (1, 3, 4, 4)),
    "squared_relu": (lambda r: N.SquaredReLU(), (1, 3, 4, 4)),
}


@pytest.mark.parametrize("name", sorted(GRAD_MODULES))
@pytest.mark.parametrize("draw", range(20))
def test_gradients_match_finite_differences(name, draw):
    factory, shape = GRAD_MODULES[name]
    rng = np.random.default_rng(1000 * draw + len(name))
    module = factory(rng)
    x = rng.standard_normal(shape)
    if name in ("leaky_relu", "squared_relu"):
        # keep away from the kink at 0 where the derivative jumps
        x = np.where(np.abs(x) < 1e-2, 0.5, x)
    if name == "layer_norm":
        module.gamma.data[:] = rng.standard_normal(5)
        module.beta.data[:] = rng.standard_normal(5)
    errors = N.gradcheck(module, x, rng)
    assert max(errors.values()) <= 1e-4, errors
