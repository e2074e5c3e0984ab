"""
Optimizers, learning-rate schedule and early stopping.
"""

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .tensor import Parameter


class OptimizerError(Exception):
    """Optimizer step cannot be applied."""

    pass


class TrainConfigError(Exception):
    """Training hyperparameters are invalid."""

    pass


@dataclass
class TrainConfig:
    """Training hyperparameters."""

    optimizer: str = "sgd"
    base_lr: float = 0.001
    lr_halving_period: int = 50  # epochs
    batch_size: int = 32
    early_stop_delta: float = 0.02
    early_stop_patience: int = 10  # epochs
    max_epochs: int = 100
    augmentation_fold: int = 0
    master_seed: int = 0

    def validate(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise TrainConfigError(
                f"Unknown optimizer {self.optimizer!r}; choose one of {', '.join(OPTIMIZERS)}"
            )
        if self.batch_size < 1:
            raise TrainConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.base_lr > 0:
            raise TrainConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.lr_halving_period < 1:
            raise TrainConfigError(
                f"lr_halving_period must be >= 1, got {self.lr_halving_period}"
            )
        if not self.early_stop_delta > 0:
            raise TrainConfigError(f"early_stop_delta must be positive, got {self.early_stop_delta}")
        if self.early_stop_patience < 1:
            raise TrainConfigError(
                f"early_stop_patience must be >= 1, got {self.early_stop_patience}"
            )
        if self.max_epochs < 1:
            raise TrainConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.augmentation_fold < 0:
            raise TrainConfigError(
                f"augmentation_fold must be >= 0, got {self.augmentation_fold}"
            )
        if self.master_seed < 0:
            raise TrainConfigError(f"master_seed must be non-negative, got {self.master_seed}")


@dataclass
class OptimizerState:
    """Per-parameter buffers keyed by parameter name, plus the step counter."""

    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    step: int = 0

    def slot(self, name: str, slot: str, like: np.ndarray) -> np.ndarray:
        """Buffer `slot` of parameter `name`, created as zeros on first use."""
        slots = self.buffers.setdefault(name, {})
        if slot not in slots:
            slots[slot] = np.zeros_like(like)
        return slots[slot]


class Optimizer:
    """Per-parameter update rule."""

    slots: tuple[str, ...] = ()

    def update(
        self,
        weights: np.ndarray,
        grad: np.ndarray,
        buffers: dict[str, np.ndarray],
        step: int,
        lr: float,
    ) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    """Plain gradient descent, no momentum."""

    def update(self, weights, grad, buffers, step, lr):
        return weights - lr * grad


class RMSprop(Optimizer):
    slots = ("square_avg",)

    def __init__(self, decay: float = 0.9, epsilon: float = 1e-8):
        self.decay = decay
        self.epsilon = epsilon

    def update(self, weights, grad, buffers, step, lr):
        avg = self.decay * buffers["square_avg"] + (1 - self.decay) * grad**2
        buffers["square_avg"] = avg
        return weights - lr * grad / (np.sqrt(avg) + self.epsilon)


class AdaDelta(Optimizer):
    """Scale-free updates from running averages of squared gradients and steps; ignores lr."""

    slots = ("square_avg", "delta_avg")

    def __init__(self, rho: float = 0.95, epsilon: float = 1e-6):
        self.rho = rho
        self.epsilon = epsilon

    def update(self, weights, grad, buffers, step, lr):
        square_avg = self.rho * buffers["square_avg"] + (1 - self.rho) * grad**2
        delta = -np.sqrt(buffers["delta_avg"] + self.epsilon) / np.sqrt(square_avg + self.epsilon) * grad
        buffers["square_avg"] = square_avg
        buffers["delta_avg"] = self.rho * buffers["delta_avg"] + (1 - self.rho) * delta**2
        return weights + delta


class Adam(Optimizer):
    slots = ("exp_avg", "exp_avg_sq")

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    def update(self, weights, grad, buffers, step, lr):
        m = self.beta1 * buffers["exp_avg"] + (1 - self.beta1) * grad
        v = self.beta2 * buffers["exp_avg_sq"] + (1 - self.beta2) * grad**2
        buffers["exp_avg"] = m
        buffers["exp_avg_sq"] = v
        m_hat = m / (1 - self.beta1**step)
        v_hat = v / (1 - self.beta2**step)
        return weights - lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


OPTIMIZERS: dict[str, Optimizer] = {
    "sgd": SGD(),
    "rmsprop": RMSprop(),
    "adadelta": AdaDelta(),
    "adam": Adam(),
}


def optimizer_step(
    kind: str,
    state: OptimizerState,
    params: Sequence[Parameter],
    grads: Optional[Mapping[str, np.ndarray]] = None,
    lr: float = 0.001,
) -> OptimizerState:
    """
    Apply one update to every trainable parameter in place.

    Args:
        kind: One of OPTIMIZERS
        state: Buffers from previous steps; updated in place
        params: Parameters to update
        grads: Gradients by parameter name; defaults to each parameter's grad buffer
        lr: Learning rate in effect (AdaDelta ignores it)

    Returns:
        The updated state

    Raises:
        OptimizerError: Unknown kind, or a trainable parameter has no gradient
    """
    try:
        optimizer = OPTIMIZERS[kind]
    except KeyError:
        raise OptimizerError(f"Unknown optimizer {kind!r}") from None

    trainable = [p for p in params if p.trainable]
    resolved = []
    for param in trainable:
        grad = grads.get(param.name) if grads is not None else param.grad
        if grad is None:
            raise OptimizerError(f"No gradient for parameter {param.name}")
        if grad.shape != param.shape:
            raise OptimizerError(
                f"Gradient for {param.name} has shape {grad.shape}, parameter has {param.shape}"
            )
        resolved.append((param, grad))

    state.step += 1
    for param, grad in resolved:
        buffers = {slot: state.slot(param.name, slot, param.data) for slot in optimizer.slots}
        updated = optimizer.update(param.data, grad.astype(param.data.dtype), buffers, state.step, lr)
        for slot in optimizer.slots:
            state.buffers[param.name][slot] = buffers[slot].astype(param.data.dtype, copy=False)
        param.data = updated
    return state


def lr_schedule(epoch: int, config: Optional[TrainConfig] = None) -> float:
    """Step decay: base_lr halved every lr_halving_period epochs."""
    config = config or TrainConfig()
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return config.base_lr * 0.5 ** (epoch // config.lr_halving_period)


def early_stop(
    validation_losses: Sequence[float],
    delta: float = 0.02,
    patience: int = 10,
) -> bool:
    """
    True iff the last `patience` epoch-to-epoch changes are all below `delta`
    in absolute value.
    """
    if len(validation_losses) < patience + 1:
        return False
    recent = np.asarray(validation_losses[-(patience + 1):], dtype=np.float64)
    return bool(np.all(np.abs(np.diff(recent)) < delta))
