"""Loss formulas: frozen oracle values, symmetry and scale invariances."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triplet_tagger import objectives as O
from triplet_tagger import tensor as tt
from triplet_tagger.errors import DimensionError, NumericError
from triplet_tagger.tensor import Tensor

# Scalar oracle values, recomputed at high precision before freezing.
LN2 = 0.6931471805599453
LOSS_D1 = 0.3132616875182228  # ln(1 + e**-1)
LOSS_DM1 = 1.3132616875182228  # ln(1 + e)
SIGMA1 = 0.7310585786300049
LN5 = 1.6094379124341003
CE_200 = 0.2395447662218845  # ln(1 + 2 e**-2); logits [2,0,0], gold 0
COS_45 = 0.7071067811865475


def vec(data, grad=False):
    return Tensor(np.asarray(data, dtype=float), requires_grad=grad)


class TestCosine:
    def test_identical_vectors(self):
        v = vec([3.0, 4.0, 12.0])
        assert O.cosine_similarity(v, v).item() == pytest.approx(1.0, abs=1e-7)

    def test_antipodal(self):
        v = vec([1.0, -2.0, 0.5])
        assert O.cosine_similarity(v, -v).item() == pytest.approx(-1.0, abs=1e-7)

    def test_45_degrees(self):
        c = O.cosine_similarity(vec([1.0, 0.0]), vec([1.0, 1.0])).item()
        assert c == pytest.approx(COS_45, abs=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            O.cosine_similarity(vec([1.0, 2.0]), vec([1.0, 2.0, 3.0]))

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
        batch = O.cosine_similarity(vec(a), vec(b)).data
        single = [O.cosine_similarity(vec(a[i]), vec(b[i])).item() for i in range(5)]
        assert np.allclose(batch, single, atol=0, rtol=0)


class TestSigmoidScore:
    def test_zero_is_exactly_half(self):
        assert O.sigmoid_score(0.0) == 0.5

    def test_monotone_bound(self):
        vals = [O.sigmoid_score(d) for d in (-5, -1, 0, 1, 5, 50)]
        assert vals == sorted(vals)
        assert vals[-1] > 1 - 1e-12 and vals[-1] <= 1.0

    def test_at_one(self):
        assert O.sigmoid_score(1.0) == pytest.approx(SIGMA1, abs=1e-6)

    def test_complement_identity(self):
        for d in (-3.7, -0.2, 0.9, 8.0):
            assert O.sigmoid_score(d) + O.sigmoid_score(-d) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_nan(self):
        with pytest.raises(NumericError):
            O.sigmoid_score(float("nan"))


class TestTripletLoss:
    def test_equal_descriptions_give_ln2(self):
        rng = np.random.default_rng(1)
        a = vec(rng.normal(size=8))
        d = vec(rng.normal(size=8))
        loss, scores = O.triplet_loss(a, d, d)
        assert loss.item() == pytest.approx(LN2, abs=1e-9)
        assert scores.d_i == 0.0

    def test_unit_gap(self):
        # orthogonal construction: c_p = 1, c_n = 0 up to epsilon effects
        t = vec([1.0, 0.0])
        loss, scores = O.triplet_loss(t, vec([2.0, 0.0]), vec([0.0, 3.0]))
        assert scores.c_p == pytest.approx(1.0, abs=1e-7)
        assert scores.c_n == pytest.approx(0.0, abs=1e-9)
        assert loss.item() == pytest.approx(LOSS_D1, abs=1e-6)

    def test_inverted_gap(self):
        t = vec([1.0, 0.0])
        loss, scores = O.triplet_loss(t, vec([0.0, 3.0]), vec([2.0, 0.0]))
        assert scores.d_i == pytest.approx(-1.0, abs=1e-7)
        assert loss.item() == pytest.approx(LOSS_DM1, abs=1e-6)

    def test_positive_and_decreasing_in_gap(self):
        losses = []
        t = vec([1.0, 0.0])
        for theta in (0.0, 0.3, 0.8, 1.4, 2.6):
            p = vec([math.cos(theta), math.sin(theta)])
            loss, _ = O.triplet_loss(t, p, vec([0.0, 1.0]))
            losses.append(loss.item())
        assert all(v > 0 for v in losses)
        assert losses == sorted(losses)

    def test_scores_are_consistent(self):
        rng = np.random.default_rng(5)
        _, s = O.triplet_loss(vec(rng.normal(size=8)), vec(rng.normal(size=8)), vec(rng.normal(size=8)))
        assert s.d_i == s.c_p - s.c_n

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 9999), scale=st.floats(0.5, 10.0))
    def test_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        a, p, n = (rng.normal(size=8) for _ in range(3))
        base, _ = O.triplet_loss(vec(a), vec(p), vec(n))
        which = seed % 3
        scaled = [a, p, n]
        scaled[which] = scaled[which] * scale
        other, _ = O.triplet_loss(*(vec(v) for v in scaled))
        assert abs(base.item() - other.item()) <= 1e-6

    def test_swap_maps_gap_to_negative(self):
        rng = np.random.default_rng(9)
        a, p, n = (vec(rng.normal(size=8)) for _ in range(3))
        _, s1 = O.triplet_loss(a, p, n)
        _, s2 = O.triplet_loss(a, n, p)
        assert s2.d_i == pytest.approx(-s1.d_i, abs=1e-12)
        assert O.sigmoid_score(s1.d_i) + O.sigmoid_score(s2.d_i) == pytest.approx(1.0, abs=1e-12)

    def test_batch_mean_matches_singles(self):
        rng = np.random.default_rng(2)
        t_, p, n = (rng.normal(size=(4, 8)) for _ in range(3))
        batch_loss, scores = O.triplet_loss_batch(vec(t_), vec(p), vec(n))
        singles = [O.triplet_loss(vec(t_[i]), vec(p[i]), vec(n[i]))[0].item() for i in range(4)]
        assert batch_loss.item() == pytest.approx(np.mean(singles), abs=1e-14)
        assert scores.d_i.shape == (4,)

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(4)
        vs = [vec(rng.normal(size=8), grad=True) for _ in range(3)]
        assert tt.grad_check(lambda a, p, n: O.triplet_loss(a, p, n)[0], vs) <= 1e-4


class TestNerLoss:
    def test_uniform_logits(self):
        logits = vec(np.zeros((2, 3, 5)))
        out = O.ner_loss(logits, np.zeros((2, 3), dtype=int), np.ones((2, 3)))
        assert out.item() == pytest.approx(LN5, abs=1e-9)

    def test_confident_limit(self):
        logits = np.zeros((1, 1, 3))
        logits[0, 0, 0] = 40.0
        out = O.ner_loss(vec(logits), np.array([[0]]), np.ones((1, 1)))
        assert out.item() == pytest.approx(0.0, abs=1e-12)

    def test_single_token_oracle_value(self):
        out = O.ner_loss(vec([[[2.0, 0.0, 0.0]]]), np.array([[0]]), np.ones((1, 1)))
        assert out.item() == pytest.approx(CE_200, abs=1e-12)

    def test_masked_positions_contribute_nothing(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(1, 4, 3))
        gold = np.array([[0, 1, 2, 1]])
        full = O.ner_loss(vec(logits[:, :2]), gold[:, :2], np.ones((1, 2))).item()
        padded = O.ner_loss(vec(logits), gold, np.array([[1.0, 1.0, 0.0, 0.0]])).item()
        assert padded == pytest.approx(full, abs=1e-15)

    def test_nonnegative(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            logits = vec(rng.normal(size=(2, 3, 4)))
            gold = rng.integers(0, 4, size=(2, 3))
            out = O.ner_loss(logits, gold, np.ones((2, 3)))
            assert out.item() >= 0.0

    def test_gradient(self):
        rng = np.random.default_rng(12)
        logits = vec(rng.normal(size=(2, 3, 4)), grad=True)
        gold = rng.integers(0, 4, size=(2, 3))
        mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
        assert tt.grad_check(lambda l: O.ner_loss(l, gold, mask), [logits]) <= 1e-4


class TestMultitaskLoss:
    def test_lambda_zero_reduces_to_ner_exactly(self):
        assert O.multitask_loss(0.837261, 5.0, 0.0) == 0.837261

    def test_arithmetic(self):
        assert O.multitask_loss(0.5, 0.5, 1.0) == 1.0
        assert O.multitask_loss(1.2, 0.8, 0.25) == pytest.approx(1.4, abs=1e-15)

    def test_rejects_negative_lambda(self):
        with pytest.raises(NumericError):
            O.multitask_loss(1.0, 1.0, -0.5)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            O.multitask_loss(float("inf"), 1.0, 1.0)

    def test_tensor_combination_gradient_is_additive(self):
        rng = np.random.default_rng(3)
        lam = 0.7
        data = rng.normal(size=6)

        a = vec(data, grad=True)
        tt.backward(O.multitask_loss((a**2).sum(), tt.softplus(a).sum(), lam))
        combined = a.grad.copy()

        a1, a2 = vec(data, grad=True), vec(data, grad=True)
        tt.backward((a1**2).sum())
        tt.backward(tt.softplus(a2).sum())
        assert np.abs(combined - (a1.grad + lam * a2.grad)).max() <= 1e-10
