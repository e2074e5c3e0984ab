"""
Tests for optimizers, the learning-rate schedule and early stopping.
"""

import numpy as np
import pytest

from codelnet.optim import (
    OPTIMIZERS,
    OptimizerError,
    OptimizerState,
    TrainConfig,
    TrainConfigError,
    early_stop,
    lr_schedule,
    optimizer_step,
)
from codelnet.tensor import Parameter, Tensor


def param(value, name: str = "w", trainable: bool = True) -> Parameter:
    return Parameter(Tensor(np.atleast_1d(np.asarray(value, dtype=np.float32))), name, trainable)


class TestOptimizers:
    """Tests for single update steps."""

    def test_sgd(self):
        """Test w - lr * g."""
        p = param(1.0)
        optimizer_step("sgd", OptimizerState(), [p], {"w": np.array([0.5])}, lr=0.1)
        assert p.data[0] == pytest.approx(0.95)

    def test_adam_first_step(self):
        """Test the bias-corrected first step moves by about lr."""
        p = param(1.0)
        optimizer_step("adam", OptimizerState(), [p], {"w": np.array([1.0])}, lr=0.001)
        assert p.data[0] == pytest.approx(0.999, abs=1e-6)

    def test_rmsprop_first_step(self):
        """Test 1 - 0.001 / sqrt(0.1)."""
        p = param(1.0)
        optimizer_step("rmsprop", OptimizerState(), [p], {"w": np.array([1.0])}, lr=0.001)
        assert p.data[0] == pytest.approx(1 - 0.001 / np.sqrt(0.1), abs=1e-6)
        assert p.data[0] == pytest.approx(0.99684, abs=1e-5)

    def test_adadelta_ignores_lr(self):
        """Test AdaDelta's step does not depend on the learning rate."""
        a, b = param(1.0), param(1.0)
        optimizer_step("adadelta", OptimizerState(), [a], {"w": np.array([1.0])}, lr=0.001)
        optimizer_step("adadelta", OptimizerState(), [b], {"w": np.array([1.0])}, lr=10.0)
        assert a.data[0] == b.data[0]
        assert a.data[0] == pytest.approx(1 - np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6), rel=1e-5)

    @pytest.mark.parametrize("kind", sorted(OPTIMIZERS))
    def test_zero_gradient_is_a_no_op(self, kind):
        """Test a zero gradient leaves parameters unchanged."""
        p = param([0.3, -1.2, 4.0])
        state = OptimizerState()
        for _ in range(3):
            optimizer_step(kind, state, [p], {"w": np.zeros(3)}, lr=0.01)
        np.testing.assert_allclose(p.data, [0.3, -1.2, 4.0], atol=1e-9)

    def test_uses_parameter_grad_buffers(self):
        """Test gradients default to the parameters' own buffers."""
        p = param([2.0])
        p.tensor.grad = np.array([1.0], dtype=np.float32)
        optimizer_step("sgd", OptimizerState(), [p], lr=0.5)
        assert p.data[0] == pytest.approx(1.5)

    def test_missing_gradient_names_parameter(self):
        """Test a trainable parameter without gradient is an error."""
        with pytest.raises(OptimizerError, match="fc0.bias"):
            optimizer_step("sgd", OptimizerState(), [param(1.0, "fc0.bias")])

    def test_frozen_parameters_untouched(self):
        """Test non-trainable parameters are skipped."""
        frozen = param(1.0, "frozen", trainable=False)
        live = param(1.0, "live")
        optimizer_step("sgd", OptimizerState(), [frozen, live], {"live": np.array([1.0])}, lr=0.1)
        assert frozen.data[0] == 1.0
        assert live.data[0] == pytest.approx(0.9)

    def test_unknown_optimizer(self):
        """Test an unknown kind is rejected."""
        with pytest.raises(OptimizerError, match="lbfgs"):
            optimizer_step("lbfgs", OptimizerState(), [])

    def test_state_tracks_steps_and_slots(self):
        """Test the step counter and per-parameter buffers."""
        p = param([1.0, 2.0])
        state = OptimizerState()
        optimizer_step("adam", state, [p], {"w": np.ones(2)})
        optimizer_step("adam", state, [p], {"w": np.ones(2)})
        assert state.step == 2
        assert set(state.buffers["w"]) == {"exp_avg", "exp_avg_sq"}
        assert state.buffers["w"]["exp_avg"].dtype == np.float32


class TestSchedule:
    """Tests for the step-decay schedule."""

    def test_halving(self):
        """Test 0.001 halves every 50 epochs."""
        assert lr_schedule(0) == 0.001
        assert lr_schedule(49) == 0.001
        assert lr_schedule(50) == 0.0005
        assert lr_schedule(120) == pytest.approx(0.00025)

    def test_custom_period(self):
        """Test the period and base rate come from the config."""
        config = TrainConfig(base_lr=0.1, lr_halving_period=10)
        assert lr_schedule(25, config) == pytest.approx(0.025)

    def test_negative_epoch(self):
        """Test epochs start at zero."""
        with pytest.raises(ValueError):
            lr_schedule(-1)


class TestEarlyStop:
    """Tests for the plateau criterion."""

    def test_constant_plateau(self):
        """Test eleven equal losses stop training."""
        assert early_stop([0.5] * 11)

    def test_oscillation_continues(self):
        """Test changes of 0.05 keep training going."""
        assert not early_stop([0.5, 0.55] * 6)

    def test_insufficient_history(self):
        """Test fewer than patience + 1 entries never stop."""
        assert not early_stop([0.5] * 10)
        assert not early_stop([])

    def test_only_recent_window_counts(self):
        """Test early large changes do not prevent stopping."""
        assert early_stop([2.0, 1.0] + [0.5 + 0.001 * i for i in range(11)])

    def test_custom_patience(self):
        """Test a shorter patience."""
        assert early_stop([0.9, 0.5, 0.51, 0.5], delta=0.02, patience=2)


class TestTrainConfig:
    """Tests for hyperparameter validation."""

    def test_defaults_valid(self):
        """Test the defaults pass validation."""
        TrainConfig().validate()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"optimizer": "momentum"},
            {"batch_size": 0},
            {"base_lr": 0.0},
            {"max_epochs": 0},
            {"augmentation_fold": -1},
            {"early_stop_patience": 0},
        ],
    )
    def test_invalid(self, kwargs):
        """Test each invalid setting is rejected."""
        with pytest.raises(TrainConfigError):
            TrainConfig(**kwargs).validate()


class TestOptimizerProperties:
    """Seeded long-run checks for every optimizer."""

    @pytest.mark.parametrize("kind", list(OPTIMIZERS))
    def test_random_steps_stay_finite(self, kind):
        """Test 1000 steps with random gradients keep weights and buffers finite."""
        rng = np.random.default_rng(1)
        p = param(rng.standard_normal(6))
        state = OptimizerState()
        for _ in range(1000):
            grad = rng.standard_normal(6) * 10.0 ** rng.integers(-4, 3)
            optimizer_step(kind, state, [p], {"w": grad}, lr=0.01)
        assert np.all(np.isfinite(p.data))
        for buffer in state.buffers["w"].values():
            assert np.all(np.isfinite(buffer))
        assert state.step == 1000

    @pytest.mark.parametrize("kind", list(OPTIMIZERS))
    def test_quadratic_descends(self, kind):
        """Test 100 steps on f(w) = w^2 shrink |w|."""
        p = param([1.0, -2.0])
        start = np.abs(p.data).copy()
        state = OptimizerState()
        for _ in range(100):
            optimizer_step(kind, state, [p], {"w": 2.0 * p.data}, lr=0.01)
        assert np.all(np.abs(p.data) < start)


class TestScheduleProperties:
    """Monotonicity of the schedule and the stopping rule."""

    @pytest.mark.parametrize("base_lr,period", [(0.001, 50), (0.1, 1), (1.0, 7)])
    def test_schedule_non_increasing(self, base_lr, period):
        """Test the rate never grows and stays positive."""
        config = TrainConfig(base_lr=base_lr, lr_halving_period=period)
        rates = [lr_schedule(epoch, config) for epoch in range(500)]
        assert rates[0] == base_lr
        assert all(b <= a for a, b in zip(rates, rates[1:]))
        assert rates[-1] > 0

    @pytest.mark.parametrize("seed", range(5))
    def test_stop_persists_on_plateau(self, seed):
        """Test once a plateau stops training, extending it keeps the decision."""
        rng = np.random.default_rng(seed)
        losses = list(1.0 + np.cumsum(rng.uniform(-0.019, 0.019, size=30)))
        decisions = [early_stop(losses[:n], delta=0.02, patience=10) for n in range(1, 31)]
        assert decisions[:10] == [False] * 10
        assert all(decisions[10:])

    def test_stop_never_fires_on_steady_descent(self):
        """Test changes of at least delta keep training going."""
        losses = [1.0 - 0.03 * i for i in range(30)]
        assert not any(early_stop(losses[:n]) for n in range(1, 31))
