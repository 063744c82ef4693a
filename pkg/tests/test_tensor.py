"""Tensor core: op examples, backward sweep, tape invariants, grad_check."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triplet_tagger import tensor as tt
from triplet_tagger.errors import ContractError, DimensionError, NumericError
from triplet_tagger.tensor import Tensor


def t(data, grad=False):
    return Tensor(np.asarray(data, dtype=float), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        out = tt.matmul(t(np.eye(2)), a)
        assert np.array_equal(out.data, a.data)

    def test_scalar_1x1(self):
        assert tt.matmul(t([[2.0]]), t([[3.0]])).data.tolist() == [[6.0]]

    def test_2x2_hand_expansion(self):
        out = tt.matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[5.0, 6.0], [7.0, 8.0]]))
        assert out.data.tolist() == [[19.0, 22.0], [43.0, 50.0]]

    def test_inner_dim_mismatch(self):
        with pytest.raises(DimensionError):
            tt.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))

    def test_needs_matrices(self):
        with pytest.raises(DimensionError):
            tt.matmul(t([1.0, 2.0]), t([1.0, 2.0]))

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 4, 5))
        out = tt.matmul(t(a), t(b)).data
        for i in range(3):
            assert np.allclose(out[i], a[i] @ b[i], rtol=0, atol=0)


class TestSoftmax:
    def test_symmetric_pair(self):
        assert tt.softmax_rows(t([[0.0, 0.0]])).data.tolist() == [[0.5, 0.5]]

    @pytest.mark.parametrize("c", [-3.0, 0.0, 7.5, 100.0])
    def test_constant_row(self, c):
        out = tt.softmax_rows(t([[c, c, c]])).data
        assert np.allclose(out, 1.0 / 3.0, atol=1e-15)

    def test_log2_row(self):
        out = tt.softmax_rows(t([[np.log(2.0), 0.0]])).data
        assert np.allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.floats(-50, 50))
    def test_rows_sum_to_one_and_shift_invariant(self, seed, c):
        x = np.random.default_rng(seed).uniform(-30, 30, size=(4, 7))
        base = tt.softmax_rows(t(x)).data
        assert np.abs(base.sum(axis=1) - 1.0).max() <= 1e-12
        shifted = tt.softmax_rows(t(x + c)).data
        assert np.abs(shifted - base).max() <= 1e-12

    def test_stable_at_extremes(self):
        out = tt.softmax_rows(t([[1000.0, 0.0, -1e30]])).data
        assert np.isfinite(out).all() and out[0, 2] == 0.0


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = tt.layer_norm(t([[5.0, 5.0, 5.0]]), t([1.0] * 3), t([0.0] * 3))
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_two_point_row(self):
        out = tt.layer_norm(t([[1.0, 3.0]]), t([1.0, 1.0]), t([0.0, 0.0]), eps=1e-12)
        assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-9)

    def test_gamma_zero_collapses_to_beta(self):
        beta = [0.5, -1.0, 2.0]
        out = tt.layer_norm(t([[9.0, -2.0, 0.1]]), t([0.0] * 3), t(beta))
        assert out.data.tolist() == [beta]

    def test_eps_contract(self):
        with pytest.raises(ContractError):
            tt.layer_norm(t([[1.0, 2.0]]), t([1.0, 1.0]), t([0.0, 0.0]), eps=0.0)


class TestBackward:
    def test_bilinear_grad_is_other_factor(self):
        a, b = t([1.0, -2.0, 3.0], grad=True), t([4.0, 5.0, -6.0])
        tt.backward((a * b).sum())
        assert np.array_equal(a.grad, b.data)

    def test_quadratic_grad(self):
        a = t([1.5, -0.5, 2.0], grad=True)
        tt.backward((a**2).sum())
        assert np.array_equal(a.grad, 2.0 * a.data)

    def test_fanout_equals_sum_of_per_use(self):
        data = np.array([0.3, -1.2, 2.2])
        c1, c2 = np.array([1.0, 2.0, 3.0]), np.array([-2.0, 0.5, 1.5])
        s = t(data, grad=True)
        tt.backward(((s * t(c1)).sum() + (s * t(c2)).sum()))
        fanout = s.grad.copy()

        s1, s2 = t(data, grad=True), t(data, grad=True)
        tt.backward((s1 * t(c1)).sum())
        tt.backward((s2 * t(c2)).sum())
        assert np.array_equal(fanout, s1.grad + s2.grad)

    def test_grad_accumulates_across_calls(self):
        a = t([1.0, 2.0], grad=True)
        loss = a.sum()
        tt.backward(loss)
        tt.backward(a.sum())
        assert np.array_equal(a.grad, [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        a = t([1.0, 2.0], grad=True)
        with pytest.raises(ContractError):
            tt.backward(a * 2.0)

    def test_triplet_grads_match_finite_differences(self):
        from triplet_tagger.objectives import triplet_loss

        rng = np.random.default_rng(7)
        vecs = [t(rng.normal(size=8), grad=True) for _ in range(3)]
        err = tt.grad_check(lambda a, p, n: triplet_loss(a, p, n)[0], vecs, h=1e-5)
        assert err <= 1e-4


class TestTape:
    def test_trace_is_topological_and_unique(self):
        a = t([1.0, 2.0], grad=True)
        b = a * 2.0
        c = a + b
        d = (b * c).sum()
        tape = tt.Tape.trace(d)
        seen = set()
        for record in tape.records:
            assert id(record.output) not in seen
            for parent in record.inputs:
                if parent.op is not None:
                    assert id(parent) in seen
            seen.add(id(record.output))
        assert tape.records[-1].output is d

    def test_leaf_loss_backward(self):
        a = t(3.0, grad=True)
        tt.backward(a)
        assert a.grad == 1.0


class TestNumericGuards:
    def test_constructor_rejects_nan(self):
        with pytest.raises(NumericError):
            Tensor(np.array([1.0, np.nan]))

    def test_div_by_zero_fails_fast(self):
        with pytest.raises(NumericError):
            t([1.0]) / t([0.0])

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_overflow_fails_fast(self):
        with pytest.raises(NumericError):
            t([1e308]) * t([1e308])


class TestGradCheck:
    def test_linear_function_is_exact(self):
        # at x = 0 the central difference (h - (-h)) / 2h is exact in fp
        a = t(np.zeros(6), grad=True)
        assert tt.grad_check(lambda x: x.sum(), [a]) == 0.0
        # elsewhere only rounding of x +- h remains
        b = t(np.random.default_rng(0).normal(size=6), grad=True)
        assert tt.grad_check(lambda x: x.sum(), [b]) <= 1e-10

    def test_cosine_of_random_vectors(self):
        from triplet_tagger.objectives import cosine_similarity

        rng = np.random.default_rng(3)
        a, b = t(rng.normal(size=8), grad=True), t(rng.normal(size=8), grad=True)
        assert tt.grad_check(cosine_similarity, [a, b]) <= 1e-4

    def test_h_contract(self):
        a = t([1.0], grad=True)
        for h in (0.0, -1e-5, 0.5):
            with pytest.raises(ContractError):
                tt.grad_check(lambda x: x.sum(), [a], h=h)

    def test_needs_grad_input(self):
        with pytest.raises(ContractError):
            tt.grad_check(lambda x: x.sum(), [t([1.0])])

    def test_sampled_subset(self):
        a = t(np.random.default_rng(1).normal(size=50), grad=True)
        assert tt.grad_check(lambda x: (x**2).sum(), [a], sample=5) <= 1e-4


class TestDropout:
    def test_rate_zero_is_identity(self):
        a = t([[1.0, -2.0], [0.5, 3.0]], grad=True)
        y = tt.dropout(a)
        assert np.array_equal(y.data, a.data)
        tt.backward(y.sum())
        assert np.array_equal(a.grad, np.ones_like(a.data))

    def test_rate_positive_uses_saved_mask(self):
        a = t(np.ones((4, 8)), grad=True)
        y = tt.dropout(a, rate=0.5, rng=np.random.default_rng(0))
        tt.backward(y.sum())
        assert np.array_equal(a.grad, y.data)

    def test_contract_errors(self):
        a = t([1.0])
        with pytest.raises(ContractError):
            tt.dropout(a, rate=1.0, rng=np.random.default_rng(0))
        with pytest.raises(ContractError):
            tt.dropout(a, rate=0.5)


class TestDeterminism:
    def test_rerun_is_bit_identical(self):
        def run():
            rng = np.random.default_rng(11)
            a = t(rng.normal(size=(6, 6)), grad=True)
            b = t(rng.normal(size=(6, 6)), grad=True)
            out = tt.gelu(tt.matmul(a, b))
            out = tt.layer_norm(out, t(np.ones(6)), t(np.zeros(6)))
            loss = (tt.softmax_rows(out) * t(rng.normal(size=(6, 6)))).sum()
            tt.backward(loss)
            return loss.item(), a.grad.copy()

        (l1, g1), (l2, g2) = run(), run()
        assert l1 == l2
        assert np.array_equal(g1, g2)


class TestOtherOps:
    def test_embedding_range_check(self):
        with pytest.raises(ContractError):
            tt.embedding(t(np.ones((3, 2))), np.array([[0, 3]]))

    def test_masked_mean_needs_unmasked(self):
        with pytest.raises(ContractError):
            tt.masked_mean(t(np.ones((1, 2, 3))), np.zeros((1, 2)))

    def test_cross_entropy_gold_out_of_range(self):
        from triplet_tagger.errors import DataError

        with pytest.raises(DataError):
            tt.cross_entropy(t(np.zeros((1, 1, 3))), np.array([[5]]), np.ones((1, 1)))

    def test_mean_matches_sum(self):
        a = t(np.arange(12.0).reshape(3, 4), grad=True)
        assert tt.tensor_mean(a).item() == pytest.approx(a.data.mean(), abs=0)
