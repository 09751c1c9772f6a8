import numpy as np
import pytest

from crwkv import shift
from crwkv.numerics import gradcheck


def counts(variant, C):
    return [n for _, _, n in shift.partition_channels(shift.dictionary_for(variant), C)]


class TestPartition:
    def test_cts_48(self):
        assert counts("cts", 48) == [6] * 4 + [3] * 8

    def test_cts_50_residue_in_last_span(self):
        c = counts("cts", 50)
        assert c == [6] * 4 + [3] * 7 + [5]

    @pytest.mark.parametrize("variant", ["uni", "bi", "quad", "cts", "cts_plus"])
    def test_spans_tile_channels(self, variant):
        D = shift.dictionary_for(variant)
        for C in range(1, 257):
            pos = 0
            for _, start, n in shift.partition_channels(D, C):
                assert start == pos and n >= 0
                pos += n
            assert pos == C

    def test_weights_inverse_manhattan(self):
        D = shift.dictionary_for("cts_plus")
        assert sorted(set(D.distances())) == [1, 2, 3]
        assert D.p_sum() == 4 + 8 * shift.Fraction(1, 2) + 4 * shift.Fraction(1, 3)

    def test_cts_dictionary_order(self):
        assert shift.CTS_OFFSETS[:4] == [(0, 1), (0, -1), (1, 0), (-1, 0)]
        assert shift.CTS_OFFSETS[4:8] == [(0, 2), (0, -2), (2, 0), (-2, 0)]
        assert shift.CTS_OFFSETS[8:] == [(1, 1), (1, -1), (-1, 1), (-1, -1)]

    def test_nonpositive_channels(self):
        with pytest.raises(ValueError):
            shift.partition_channels(shift.dictionary_for("cts"), 0)

    @pytest.mark.parametrize("offsets", [[], [(0, 0)], [(0, 1), (0, 1)]])
    def test_invalid_dictionary(self, offsets):
        with pytest.raises(ValueError):
            shift.OffsetDictionary(offsets)

    def test_unknown_variant(self):
        with pytest.raises(ValueError, match="unknown shift variant"):
            shift.dictionary_for("hex")


class TestShift:
    def test_omega_zero_is_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 24, 7, 5))
        for variant in ("uni", "bi", "quad", "cts", "cts_plus"):
            np.testing.assert_array_equal(shift.baseline_shift(x, variant, 0.0), x)

    def test_right_offset_zeroes_left_border(self):
        x = np.random.default_rng(1).standard_normal((1, 3, 4, 5))
        out = shift.baseline_shift(x, "uni", 1.0)
        np.testing.assert_array_equal(out[..., 0], 0.0)
        np.testing.assert_array_equal(out[..., 1:], x[..., :-1])

    def test_constant_image_interior_unchanged(self):
        x = np.full((1, 48, 9, 9), 2.5)
        out = shift.cts(x, shift.dictionary_for("cts"), 0.7)
        np.testing.assert_allclose(out[..., 2:-2, 2:-2], 2.5)

    def test_quad_eight_channels(self):
        x = np.zeros((1, 8, 5, 5))
        x[:, :, 2, 2] = 1.0
        out = shift.baseline_shift(x, "quad", 1.0)
        # channel pairs move right, left, down, up
        for c, (y, xx) in zip(range(0, 8, 2), [(2, 3), (2, 1), (3, 2), (1, 2)]):
            assert out[0, c, y, xx] == 1.0 and out[0, c + 1, y, xx] == 1.0
            assert out[0, c].sum() == 1.0

    def test_bi_hot_pixel(self):
        x = np.zeros((1, 2, 3, 3))
        x[0, :, 1, 1] = 1.0
        out = shift.baseline_shift(x, "bi", 0.5)
        assert out[0, 0, 1, 2] == 0.5 and out[0, 1, 1, 0] == 0.5
        assert out[0, 0, 1, 1] == 0.5 and out[0, 1, 1, 1] == 0.5

    def test_uni_equals_single_offset_cts(self):
        x = np.random.default_rng(2).standard_normal((1, 6, 4, 4))
        D = shift.OffsetDictionary([(0, 1)])
        np.testing.assert_array_equal(shift.baseline_shift(x, "uni", 0.3), shift.cts(x, D, 0.3))

    def test_linear_in_omega(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 12, 6, 6))
        D = shift.dictionary_for("cts")
        a, b = shift.cts(x, D, 0.0), shift.cts(x, D, 1.0)
        for om in (0.25, 0.6):
            np.testing.assert_allclose(shift.cts(x, D, om), (1 - om) * a + om * b, atol=1e-12)

    def test_locality(self):
        # output at q depends only on inputs within Manhattan distance 2
        x = np.zeros((1, 12, 9, 9))
        x[0, :, 4, 4] = 1.0
        out = shift.cts(x, shift.dictionary_for("cts"), 1.0)
        ys, xs = np.nonzero(np.any(out[0] != 0, axis=0))
        assert np.all(np.abs(ys - 4) + np.abs(xs - 4) <= 2)

    def test_offsets_larger_than_map(self):
        x = np.ones((1, 12, 1, 1))
        out = shift.cts(x, shift.dictionary_for("cts"), 1.0)
        np.testing.assert_array_equal(out, 0.0)

    def test_adjoint(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 20, 5, 6))
        g = rng.standard_normal(x.shape)
        spans = shift.partition_channels(shift.dictionary_for("cts_plus"), 20)
        lhs = np.sum(shift.shifted(x, spans) * g)
        rhs = np.sum(x * shift.shifted_backward(g, spans))
        assert abs(lhs - rhs) < 1e-10


class TestTokenShift:
    def test_initial_omega(self):
        assert shift.TokenShift("cts").omega == 0.5

    def test_none_is_identity(self):
        ts = shift.TokenShift("none")
        x = np.arange(12.0).reshape(1, 3, 2, 2)
        assert ts(x) is x
        assert list(ts.named_parameters()) == []

    @pytest.mark.parametrize("variant", ["bi", "quad", "cts", "cts_plus"])
    def test_gradients(self, variant):
        rng = np.random.default_rng(5)
        ts = shift.TokenShift(variant, np.float64)
        ts.omega_raw.data[:] = 0.3
        errs = gradcheck(ts, rng.standard_normal((1, 14, 5, 5)), rng)
        assert max(errs.values()) <= 1e-6
