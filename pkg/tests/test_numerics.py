import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ureca import numerics
from ureca.errors import DimensionError, InputError

finite = st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False)


def mp_softmax(row):
    mpmath.mp.dps = 50
    ex = [mpmath.e ** mpmath.mpf(x) for x in row]
    s = sum(ex)
    return [float(e / s) for e in ex]


class TestMatmul:
    def test_identity(self):
        np.testing.assert_array_equal(numerics.matmul(np.eye(2), np.eye(2)), np.eye(2))
        np.testing.assert_array_equal(numerics.matmul(np.eye(2), [[2, 3], [4, 5]]), [[2, 3], [4, 5]])

    def test_worked_product(self):
        # 1*5+2*7=19, 1*6+2*8=22, 3*5+4*7=43, 3*6+4*8=50
        np.testing.assert_array_equal(numerics.matmul([[1, 2], [3, 4]], [[5, 6], [7, 8]]), [[19, 22], [43, 50]])

    def test_dimension_mismatch_reports_shapes(self):
        with pytest.raises(DimensionError, match="2x3 by 2x2"):
            numerics.matmul(np.ones((2, 3)), np.ones((2, 2)))

    def test_against_triple_loop(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
            naive = [[sum(a[i, k] * b[k, j] for k in range(8)) for j in range(8)] for i in range(8)]
            got = numerics.matmul(a, b)
            assert np.max(np.abs(got - naive) / np.maximum(1.0, np.abs(naive))) <= 1e-10

    def test_rejects_nonfinite(self):
        with pytest.raises(InputError):
            numerics.matmul([[np.nan]], [[1.0]])


class TestRowSoftmax:
    def test_uniform_row(self):
        np.testing.assert_allclose(numerics.row_softmax([[0.0, 0.0, 0.0]]), [[1 / 3] * 3], atol=1e-15)

    def test_single_element(self):
        assert numerics.row_softmax([[123.4]])[0, 0] == 1.0

    def test_log_ratios(self):
        row = [math.log(1), math.log(2), math.log(3)]
        expected = mp_softmax(row)
        np.testing.assert_allclose(expected, [1 / 6, 1 / 3, 1 / 2], atol=1e-15)
        np.testing.assert_allclose(numerics.row_softmax([row])[0], expected, atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        out = numerics.row_softmax([[1000.0, 999.0]])
        np.testing.assert_allclose(out[0], mp_softmax([1000.0, 999.0]), atol=1e-15)

    @given(arrays(np.float64, (3, 5), elements=finite), finite)
    def test_rows_sum_to_one_and_shift_invariant(self, m, c):
        out = numerics.row_softmax(m)
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(numerics.row_softmax(m + c), out, atol=1e-12)


class TestLogSumExp:
    def test_single(self):
        assert numerics.log_sum_exp([3.25], [1.0]) == 3.25

    def test_symmetric_zero(self):
        assert numerics.log_sum_exp([0.0, 0.0], [0.5, 0.5]) == 0.0

    def test_worked_value(self):
        mpmath.mp.dps = 50
        oracle = float(mpmath.log(mpmath.mpf("0.5") * 2 + mpmath.mpf("0.5") * mpmath.mpf("0.5")))
        assert oracle == pytest.approx(math.log(1.25), abs=1e-15)
        got = numerics.log_sum_exp([math.log(2), -math.log(2)], [0.5, 0.5])
        assert got == pytest.approx(oracle, abs=1e-15)
        assert round(got, 6) == 0.223144

    def test_weight_sum_violation(self):
        with pytest.raises(InputError, match="sum to 1"):
            numerics.log_sum_exp([0.0, 1.0], [0.5, 0.6])

    def test_negative_weight(self):
        with pytest.raises(InputError):
            numerics.log_sum_exp([0.0, 1.0], [1.5, -0.5])

    @given(st.lists(finite, min_size=1, max_size=8), st.data())
    def test_jensen_lower_bound(self, v, data):
        raw = data.draw(st.lists(st.floats(0.01, 1.0), min_size=len(v), max_size=len(v)))
        w = np.array(raw) / np.sum(raw)
        w = w / w.sum()
        assert numerics.log_sum_exp(v, w) >= float(np.dot(w, v)) - 1e-12

    @given(finite, st.integers(1, 8))
    def test_equality_for_constant_values(self, x, n):
        w = np.full(n, 1.0 / n)
        assert abs(numerics.log_sum_exp([x] * n, w) - x) <= 1e-12


class TestArgsortDesc:
    def test_examples(self):
        assert numerics.argsort_desc([0.5, 2.0, 1.0]) == [1, 2, 0]
        assert numerics.argsort_desc([1, 1]) == [0, 1]
        assert numerics.argsort_desc([]) == []

    @given(st.lists(st.integers(-3, 3).map(float), max_size=12))
    def test_permutation_and_order(self, v):
        idx = numerics.argsort_desc(v)
        assert sorted(idx) == list(range(len(v)))
        vals = [v[i] for i in idx]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        # ties keep index order
        for a, b in zip(idx, idx[1:]):
            if v[a] == v[b]:
                assert a < b


class TestRenormalizeRows:
    def test_uniform_drop_last(self):
        out = numerics.renormalize_rows(np.full((3, 3), 1 / 3), {0, 1})
        np.testing.assert_allclose(out, [[0.5, 0.5, 0.0]] * 3)

    def test_identity_when_all_active(self):
        np.testing.assert_allclose(numerics.renormalize_rows([[0.2, 0.8]], {0, 1}), [[0.2, 0.8]])

    def test_manual(self):
        # 0.3/(0.3+0.6) = 1/3, 0.6/0.9 = 2/3
        out = numerics.renormalize_rows([[0.1, 0.3, 0.6]], {1, 2})
        np.testing.assert_allclose(out, [[0.0, 1 / 3, 2 / 3]], atol=1e-15)

    def test_zero_mass_row_named(self):
        with pytest.raises(InputError, match="row 1"):
            numerics.renormalize_rows([[0.5, 0.5], [1.0, 0.0]], {1})
