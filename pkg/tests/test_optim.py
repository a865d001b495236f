"""
Tests for Adam and the step-decay learning-rate schedule.
"""

import numpy as np
import pytest

from t3dnet.core.errors import ConfigError, DimensionError, NumericError
from t3dnet.core.optim import Adam, AdamState, LrSchedule, adam_step, lr_at
from t3dnet.core.tensor import Tensor


# ============================================================================
# adam_step
# ============================================================================

class TestAdamStep:

    def test_first_step_moves_by_lr(self):
        """With bias correction the first update is lr * sign(grad)."""
        params = {"w": np.array([1.0, -2.0, 0.5])}
        grads = {"w": np.array([0.3, -4.0, 1e-3])}
        state = AdamState(lr=0.01)
        updated, state = adam_step(params, grads, state)
        np.testing.assert_allclose(updated["w"], params["w"] - 0.01 * np.sign(grads["w"]), atol=1e-6)
        assert state.t == 1

    def test_missing_gradient_is_skipped(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        state = AdamState()
        updated, state = adam_step(params, {"a": np.ones(2), "b": None}, state)
        np.testing.assert_array_equal(updated["b"], params["b"])
        assert "b" not in state.m
        assert not np.array_equal(updated["a"], params["a"])

    def test_zero_gradient_leaves_value_unchanged(self):
        params = {"w": np.array([1.5, -0.5])}
        updated, _ = adam_step(params, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(updated["w"], params["w"])

    def test_step_counter_advances_once(self):
        state = AdamState()
        for _ in range(3):
            adam_step({"w": np.ones(1)}, {"w": np.ones(1)}, state)
        assert state.t == 3

    def test_non_finite_gradient_names_parameter(self):
        with pytest.raises(NumericError, match="bad"):
            adam_step({"bad": np.ones(2)}, {"bad": np.array([1.0, np.nan])}, AdamState())

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState())

    def test_invalid_hyperparameters(self):
        with pytest.raises(ConfigError):
            AdamState(lr=0.0)
        with pytest.raises(ConfigError):
            AdamState(beta1=1.0)


# ============================================================================
# Adam wrapper
# ============================================================================

class TestAdam:

    def test_minimizes_quadratic(self):
        x = Tensor(np.array([3.0, -2.0]), requires_grad=True, dtype=np.float64)
        opt = Adam({"x": x}, lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            (x * x).sum().backward()
            opt.step()
        assert np.all(np.abs(x.data) < 0.05)

    def test_lr_property(self):
        opt = Adam({"x": Tensor(np.ones(1), requires_grad=True)}, lr=1e-3)
        opt.lr = 5e-4
        assert opt.state.lr == 5e-4

    def test_zero_grad_clears(self):
        x = Tensor(np.ones(2), requires_grad=True)
        opt = Adam({"x": x})
        (x * 2.0).sum().backward()
        opt.zero_grad()
        assert x.grad is None


# ============================================================================
# Learning-rate schedule
# ============================================================================

class TestLrSchedule:

    @pytest.fixture
    def schedule(self):
        return LrSchedule(base_lr=1e-3, decay_factor=0.7, step_size=20)

    def test_constant_within_a_step(self, schedule):
        assert lr_at(schedule, 0) == 1e-3
        assert lr_at(schedule, 19) == 1e-3

    def test_decays_at_step_boundaries(self, schedule):
        assert lr_at(schedule, 20) == pytest.approx(7e-4)
        assert lr_at(schedule, 40) == pytest.approx(1e-3 * 0.49)

    def test_negative_epoch(self, schedule):
        with pytest.raises(ConfigError):
            lr_at(schedule, -1)

    def test_invalid_schedule(self):
        with pytest.raises(ConfigError):
            LrSchedule(decay_factor=1.5)
        with pytest.raises(ConfigError):
            LrSchedule(step_size=0)
