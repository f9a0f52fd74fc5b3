import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ureca import core, losses
from ureca.core import TransportConfig
from ureca.errors import InputError
from ureca.ingest import EmbeddingBatch
from ureca.losses import PartitionSet


def random_batch(seed, n=4, m=4, dim=4):
    rng = np.random.default_rng(seed)
    gt = tuple(int(g) for g in rng.choice(m, size=n, replace=n > m))
    return EmbeddingBatch(rng.standard_normal((n, dim)) * 0.5, rng.standard_normal((m, dim)) * 0.5, gt)


def synthetic_parts(batch, seed):
    """Random valid K/L per anchor: gt in K, the rest split three ways."""
    rng = np.random.default_rng(seed)
    pairs = {}
    for b, g in enumerate(batch.gt):
        K, L = {g}, set()
        for j in range(batch.m):
            if j != g:
                r = rng.integers(3)
                (K if r == 0 else L if r == 1 else set()).add(j)
        pairs[b] = (K, L)
    return PartitionSet.from_pairs(pairs)


def three_code_batch():
    # c0 unit, c1 orthogonal; c2 keeps |K| at 2 without touching L
    codes = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    return EmbeddingBatch([[1.0, 0.0]], codes, (0,))


class TestInfoNCE:
    def test_single_candidate(self):
        assert losses.info_nce(EmbeddingBatch([[0.3, 2.0]], [[1.0, -1.0]], (0,))) == 0.0

    def test_identity(self):
        b = EmbeddingBatch(np.eye(2), np.eye(2), (0, 1))
        mpmath.mp.dps = 40
        oracle = float(-mpmath.log(mpmath.e / (mpmath.e + 1)))
        assert abs(losses.info_nce(b, 1.0) - oracle) <= 1e-15
        assert round(losses.info_nce(b, 1.0), 6) == 0.313262
        assert abs(oracle - math.log(1 + math.exp(-1))) <= 1e-15

    def test_equal_scores(self):
        b = EmbeddingBatch(np.zeros((3, 2)), np.ones((5, 2)), (0, 1, 4))
        assert abs(losses.info_nce(b) - math.log(5)) <= 1e-12

    def test_bad_temperature(self):
        with pytest.raises(InputError):
            losses.info_nce(EmbeddingBatch(np.eye(2), np.eye(2), (0, 1)), 0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
    def test_nonnegative(self, seed, tau):
        assert losses.info_nce(random_batch(seed, 5, 6, 3), tau) >= 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-20, 20))
    def test_constant_shift_per_anchor(self, seed, c):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal((3, 4))
        codes = rng.standard_normal((5, 4))
        gt = (0, 2, 4)
        # an extra coordinate with q=c_shift and every code = 1 adds c to all scores of anchor 0
        q2 = np.hstack([q, np.array([[c], [0.0], [0.0]])])
        c2 = np.hstack([codes, np.ones((5, 1))])
        a = losses.info_nce_terms(q, codes, gt)
        b = losses.info_nce_terms(q2, c2, gt)
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


class TestUrecaAux:
    def test_worked_value(self):
        parts = PartitionSet.from_pairs({0: ({0, 2}, {1})})
        got = losses.ureca_aux_loss(three_code_batch(), parts)
        mpmath.mp.dps = 40
        oracle = float(-mpmath.log(mpmath.e / 3))
        assert abs(got - oracle) <= 1e-15
        assert round(got, 6) == 0.098612

    def test_overlap_rejected(self):
        parts = PartitionSet.from_pairs({0: ({0, 1}, {1})})
        with pytest.raises(InputError, match="overlap"):
            losses.ureca_aux_loss(three_code_batch(), parts)

    def test_zero_case(self):
        b = EmbeddingBatch([[1.0, 0.0]], [[0.0, 0.0], [1.0, 1.0]], (0,))
        assert losses.ureca_aux_loss(b, PartitionSet.from_pairs({0: ({0}, set())})) == 0.0

    def test_empty_anchor_set(self):
        with pytest.raises(InputError):
            losses.ureca_aux_loss(three_code_batch(), PartitionSet())

    def test_gt_outside_k(self):
        with pytest.raises(InputError, match="not in K"):
            losses.ureca_aux_loss(three_code_batch(), PartitionSet.from_pairs({0: ({2}, {1})}))

    def test_not_scale_invariant(self):
        b = three_code_batch()
        parts = PartitionSet.from_pairs({0: ({0, 2}, {1})})
        doubled = EmbeddingBatch(b.queries, b.codes * 2, b.gt)
        assert losses.ureca_aux_loss(doubled, parts) != losses.ureca_aux_loss(b, parts)

    def test_direct_formula(self):
        b = random_batch(3, 4, 6, 5)
        parts = synthetic_parts(b, 3)
        mpmath.mp.dps = 40
        total = mpmath.mpf(0)
        for a, part in parts.items():
            cb = [mpmath.mpf(x) for x in b.codes[b.gt[a]]]
            dot = lambda u, v: mpmath.fsum(x * y for x, y in zip(u, v))
            den = len(part.K) + mpmath.fsum(mpmath.exp(dot(cb, [mpmath.mpf(x) for x in b.codes[l]])) for l in part.L)
            total += -mpmath.log(mpmath.exp(dot(cb, cb)) / den)
        assert abs(losses.ureca_aux_loss(b, parts) - float(total / len(parts))) <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0))
    def test_monotone_in_negative_similarity(self, seed, step):
        b = random_batch(seed, 1, 5, 3)
        parts = synthetic_parts(b, seed)
        part = parts[0]
        if not part.L:
            return
        l = min(part.L)
        g = b.gt[0]
        # move c_l toward c_g: raises c_g.c_l and touches no other term
        codes = b.codes.copy()
        direction = codes[g] / max(np.linalg.norm(codes[g]), 1e-12)
        codes[l] = codes[l] + step * direction
        moved = EmbeddingBatch(b.queries, codes, b.gt)
        if codes[g] @ codes[l] > b.codes[g] @ b.codes[l]:
            assert losses.ureca_aux_loss(moved, parts) >= losses.ureca_aux_loss(b, parts) - 1e-15


class TestCombined:
    def test_zero_aux(self):
        b = EmbeddingBatch([[1.0, 0.0]], [[0.0, 0.0], [1.0, 1.0]], (0,))
        rep = losses.combined_loss(b, PartitionSet.from_pairs({0: ({0}, set())}))
        assert rep.l_combined == rep.l_info

    def test_sum_of_examples(self):
        b = three_code_batch()
        rep = losses.combined_loss(b, PartitionSet.from_pairs({0: ({0, 2}, {1})}))
        assert abs(rep.l_combined - (rep.l_info + rep.l_ureca)) <= 1e-12
        assert abs(rep.l_ureca - (math.log(3) - 1)) <= 1e-15

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_recomputation(self, seed):
        b = random_batch(seed, 5, 7, 4)
        parts = synthetic_parts(b, seed)
        rep = losses.combined_loss(b, parts, 0.7)
        assert abs(rep.l_combined - (losses.info_nce(b, 0.7) + losses.ureca_aux_loss(b, parts))) <= 1e-12
        assert abs(rep.l_combined - rep.l_info - rep.l_ureca) <= 1e-12
        assert len(rep.per_anchor) == len(parts)

    def test_from_traces(self):
        b = random_batch(1, 4, 4, 3)
        traces = [core.run_recursion(b, a, TransportConfig()) for a in range(b.n)]
        parts = PartitionSet.from_traces(traces)
        parts.validate(b)
        assert np.isfinite(losses.combined_loss(b, parts).l_combined)


class TestGradients:
    def test_quadratic_baseline(self):
        a = np.array([[2.0, -1.0], [-1.0, 3.0]])
        x = np.array([0.3, -0.7])
        err = losses.finite_diff_check(lambda v: 0.5 * v @ a @ v, x, a @ x, h=1e-4)
        assert err <= 1e-8

    def test_uniform_score_pattern(self):
        # zero queries make every score equal
        b = EmbeddingBatch(np.zeros((2, 3)), np.random.default_rng(0).standard_normal((4, 3)), (1, 3))
        gq, gc = losses.grad_info_nce(b.queries, b.codes, b.gt, 0.5)
        y = np.zeros((2, 4))
        y[0, 1] = y[1, 3] = 1
        ds = (np.full((2, 4), 0.25) - y) / (2 * 0.5)
        np.testing.assert_allclose(gq, ds @ b.codes, atol=1e-15)
        assert losses.check_batch_gradients(b, None, 0.5)["info"] <= 1e-4

    def test_single_pair_zero(self):
        b = EmbeddingBatch([[0.4, -0.1]], [[1.0, 2.0]], (0,))
        gq, gc = losses.grad_info_nce(b.queries, b.codes, b.gt)
        assert not gq.any() and not gc.any()

    def test_aux_worked_example(self):
        b = three_code_batch()
        parts = PartitionSet.from_pairs({0: ({0, 2}, {1})})
        assert losses.check_batch_gradients(b, parts)["ureca"] <= 1e-4

    def test_random_4x4(self):
        b = random_batch(42)
        errs = losses.check_batch_gradients(b, synthetic_parts(b, 42), h=1e-4)
        assert errs["info"] <= 1e-4 and errs["ureca"] <= 1e-4

    def test_bad_step(self):
        with pytest.raises(InputError):
            losses.finite_diff_check(lambda v: float(v.sum()), np.zeros(2), np.ones(2), h=0.0)

    def test_combined_is_sum(self):
        b = random_batch(5)
        parts = synthetic_parts(b, 5)
        gq, gc = losses.grad_combined(b, parts)
        gq1, gc1 = losses.grad_info_nce(b.queries, b.codes, b.gt)
        np.testing.assert_allclose(gq, gq1)
        np.testing.assert_allclose(gc, gc1 + losses.grad_ureca(b.codes, b.gt, parts))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 16), st.integers(0, 2**32 - 1), st.floats(0.2, 3.0))
    def test_property(self, n, m, dim, seed, tau):
        b = random_batch(seed, n, m, dim)
        errs = losses.check_batch_gradients(b, synthetic_parts(b, seed), tau)
        assert max(errs.values()) <= 1e-4
