"""
Tests for the tensor engine: forward values, broadcasting, tape policy and
finite-difference gradient checks.
"""

import numpy as np
import pytest

from t3dnet.core.errors import ContractError, DimensionError, NumericError
from t3dnet.core.gradcheck import check_gradients
from t3dnet.core.tensor import (
    Tensor,
    concat,
    dropout,
    gather_groups,
    is_grad_enabled,
    log_softmax,
    no_grad,
    softmax,
)

@pytest.fixture
def rng():
    return np.random.default_rng(42)


def leaf(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, shape), requires_grad=True, dtype=np.float64)


def away_from_zero(rng, *shape):
    """Values with |x| >= 0.1 so kinks stay out of finite-difference range."""
    mag = rng.uniform(0.1, 1.0, shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(mag * sign, requires_grad=True, dtype=np.float64)


# ============================================================================
# Forward values
# ============================================================================

class TestForward:
    """Values match numpy."""

    def test_elementwise(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.uniform(0.5, 2.0, (3, 4))
        ta, tb = Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)
        np.testing.assert_allclose((ta + tb).data, a + b)
        np.testing.assert_allclose((ta - tb).data, a - b)
        np.testing.assert_allclose((ta * tb).data, a * b)
        np.testing.assert_allclose((ta / tb).data, a / b)
        np.testing.assert_allclose((-ta).data, -a)
        np.testing.assert_allclose((tb ** 1.5).data, b ** 1.5)
        np.testing.assert_allclose(ta.relu().data, np.maximum(a, 0))
        np.testing.assert_allclose(ta.exp().data, np.exp(a))
        np.testing.assert_allclose(tb.log().data, np.log(b))

    def test_broadcasting(self, rng):
        a = Tensor(rng.standard_normal((2, 3, 4)), dtype=np.float64)
        b = Tensor(rng.standard_normal((4,)), dtype=np.float64)
        c = Tensor(rng.standard_normal((3, 1)), dtype=np.float64)
        assert (a + b).shape == (2, 3, 4)
        assert (a * c).shape == (2, 3, 4)

    def test_incompatible_shapes(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_matmul_batched_left(self, rng):
        a = rng.standard_normal((2, 5, 3))
        b = rng.standard_normal((3, 4))
        out = Tensor(a, dtype=np.float64) @ Tensor(b, dtype=np.float64)
        np.testing.assert_allclose(out.data, a @ b)

    def test_matmul_rejects_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))

    def test_reductions(self, rng):
        a = rng.standard_normal((3, 4, 5))
        t = Tensor(a, dtype=np.float64)
        np.testing.assert_allclose(t.sum().data, a.sum())
        np.testing.assert_allclose(t.sum(axis=1).data, a.sum(axis=1))
        np.testing.assert_allclose(t.mean(axis=(0, 2)).data, a.mean(axis=(0, 2)))
        np.testing.assert_allclose(t.max(axis=-1).data, a.max(axis=-1))

    def test_softmax_rows_sum_to_one(self, rng):
        t = Tensor(rng.standard_normal((4, 6)) * 10, dtype=np.float64)
        np.testing.assert_allclose(softmax(t).data.sum(axis=-1), np.ones(4))
        np.testing.assert_allclose(np.exp(log_softmax(t).data), softmax(t).data)

    def test_log_softmax_is_stable_for_large_logits(self):
        t = Tensor(np.array([[1000.0, 0.0, -1000.0]]), dtype=np.float64)
        out = log_softmax(t).data
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(0.0)

    def test_concat_and_reshape(self, rng):
        a = Tensor(rng.standard_normal((2, 3)))
        b = Tensor(rng.standard_normal((2, 5)))
        assert concat([a, b], axis=-1).shape == (2, 8)
        assert a.reshape(3, 2).shape == (3, 2)
        assert a.transpose().shape == (3, 2)
        with pytest.raises(DimensionError):
            concat([a, Tensor(np.ones((3, 5)))], axis=-1)
        with pytest.raises(DimensionError):
            a.reshape(4, 2)

    def test_gather_groups(self, rng):
        feats = rng.standard_normal((2, 6, 3))
        idx = np.array([[[0, 1], [5, 5]], [[2, 3], [4, 0]]])
        out = gather_groups(Tensor(feats, dtype=np.float64), idx)
        assert out.shape == (2, 2, 2, 3)
        np.testing.assert_allclose(out.data[1, 1, 0], feats[1, 4])

    def test_dtype_follows_first_tensor(self):
        t = Tensor(np.ones(3), dtype=np.float64)
        assert (t + 1.0).dtype == np.float64
        assert (Tensor(np.ones(3, dtype=np.float32)) * 2.0).dtype == np.float32


# ============================================================================
# Numeric errors
# ============================================================================

class TestNumericErrors:

    def test_division_by_zero(self):
        with pytest.raises(NumericError):
            Tensor(np.ones(2)) / Tensor(np.array([1.0, 0.0]))

    def test_log_of_non_positive(self):
        with pytest.raises(NumericError):
            Tensor(np.array([1.0, 0.0])).log()
        with pytest.raises(NumericError):
            Tensor(np.array([-1.0])).log()

    def test_overflow_is_reported(self):
        with pytest.raises(NumericError):
            Tensor(np.array([1e5]), dtype=np.float64).exp()

    def test_fractional_power_of_negative(self):
        with pytest.raises(NumericError):
            Tensor(np.array([-1.0])) ** 0.5


# ============================================================================
# Tape policy
# ============================================================================

class TestTape:
    """backward() semantics."""

    def test_simple_gradient(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True, dtype=np.float64)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_broadcast_gradient_is_summed(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True, dtype=np.float64)
        b = Tensor(np.ones(4), requires_grad=True, dtype=np.float64)
        (a * b).sum().backward()
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))

    def test_reused_input_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True, dtype=np.float64)
        (x * x + x).backward()
        assert x.grad == pytest.approx(7.0)

    def test_second_backward_raises(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = (x * 2.0).sum()
        loss.backward()
        with pytest.raises(ContractError):
            loss.backward()

    def test_leaf_grads_accumulate_across_graphs(self):
        x = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
        (x * 2.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [5.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_backward_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_backward_without_grad_raises(self):
        with pytest.raises(ContractError):
            Tensor(np.ones(3)).sum().backward()

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = (x * 2.0).sum()
        assert is_grad_enabled()
        assert not y.requires_grad

    def test_detach_cuts_the_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = (x * 2.0).detach()
        assert not y.requires_grad
        assert y.is_leaf

    def test_item_requires_single_element(self):
        with pytest.raises(ContractError):
            Tensor(np.ones(2)).item()


# ============================================================================
# Dropout
# ============================================================================

class TestDropout:

    def test_identity_in_eval(self, rng):
        x = Tensor(np.ones((4, 4)))
        assert dropout(x, 0.5, rng, training=False) is x

    def test_identity_when_p_is_zero(self, rng):
        x = Tensor(np.ones((4, 4)))
        assert dropout(x, 0.0, rng, training=True) is x

    def test_inverted_scaling(self, rng):
        x = Tensor(np.ones((50, 50)), dtype=np.float64)
        out = dropout(x, 0.5, rng, training=True).data
        assert set(np.unique(out)) <= {0.0, 2.0}

    def test_bad_probability(self, rng):
        with pytest.raises(ContractError):
            dropout(Tensor(np.ones(2)), 1.0, rng, training=True)

    def test_training_needs_rng(self):
        with pytest.raises(ContractError):
            dropout(Tensor(np.ones(2)), 0.5, None, training=True)


# ============================================================================
# Gradient checks
# ============================================================================

class TestGradcheck:
    """Analytic gradients agree with central differences (float64, eps 1e-4)."""

    def test_requires_float64(self):
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(ContractError):
            check_gradients(lambda t: t.sum(), [x])

    def test_arithmetic(self, rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 4, low=0.5, high=2.0)
        errors = check_gradients(lambda x, y: ((x * y - x / y) ** 2).sum(), [a, b])
        assert max(errors) < 1e-3

    def test_pow_exp_log(self, rng):
        a = leaf(rng, 5, low=0.2, high=2.0)
        errors = check_gradients(lambda x: ((x ** 1.5).exp() + x.log()).mean(), [a])
        assert max(errors) < 1e-3

    def test_matmul(self, rng):
        a, w = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        errors = check_gradients(lambda x, y: ((x @ y) ** 2).mean(), [a, w])
        assert max(errors) < 1e-3

    def test_relu(self, rng):
        x = away_from_zero(rng, 4, 6)
        errors = check_gradients(lambda t: (t.relu() * t).sum(), [x])
        assert max(errors) < 1e-3

    def test_max_over_axis(self, rng):
        # well-separated values keep the argmax stable under the probe step
        x = Tensor(rng.permutation(42).reshape(3, 7, 2) * 0.1, requires_grad=True, dtype=np.float64)
        errors = check_gradients(lambda t: (t.max(axis=1) ** 2).sum(), [x])
        assert max(errors) < 1e-3

    def test_softmax_and_log_softmax(self, rng):
        x = leaf(rng, 3, 5)
        target = rng.standard_normal((3, 5))
        errors = check_gradients(lambda t: (softmax(t) * target).sum() + (log_softmax(t) * target).mean(), [x])
        assert max(errors) < 1e-3

    def test_indexing_and_gather(self, rng):
        x = leaf(rng, 2, 6, 3)
        idx = np.array([[[0, 0], [5, 1]], [[2, 2], [3, 4]]])
        errors = check_gradients(lambda t: (gather_groups(t, idx) ** 2).sum() + t[:, 1:3].sum(), [x])
        assert max(errors) < 1e-3

    def test_concat_reshape_transpose(self, rng):
        a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)

        def fn(x, y):
            joined = concat([x, y], axis=-1).reshape(5, 2).transpose()
            return (joined * joined.exp()).sum()

        errors = check_gradients(fn, [a, b])
        assert max(errors) < 1e-3

    def test_raise_on_failure_passes_correct_gradients(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
        errors = check_gradients(lambda t: (t * t).sum(), [x], raise_on_failure=True)
        assert errors[0] < 1e-6
