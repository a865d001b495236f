"""
Adam optimizer and step-decay learning-rate schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from t3dnet.core.errors import ConfigError, DimensionError, NumericError
from t3dnet.core.tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter moments plus the shared step counter."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"Adam eps must be positive, got {self.eps}")


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One Adam update with bias correction.

    Parameters without a gradient (None or absent) are returned unchanged and
    their moments are left untouched. `state.t` advances by exactly one.

    Returns:
        (updated parameter arrays, the same state object, mutated)

    Raises:
        NumericError: NaN/Inf in a gradient (names the parameter)
        DimensionError: gradient shape differs from its parameter
    """
    if state.lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {state.lr}")
    for name, grad in grads.items():
        if grad is not None and not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")

    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t

    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        if grad.shape != value.shape:
            raise DimensionError(f"gradient for '{name}' has shape {grad.shape}, parameter {value.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m.astype(value.dtype, copy=False)
        state.v[name] = v.astype(value.dtype, copy=False)
        m_hat = m / bias1
        v_hat = v / bias2
        step = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        updated[name] = (value - step).astype(value.dtype, copy=False)
    return updated, state


class Adam:
    """Adam over a dict of named parameter tensors; updates `.data` in place."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        values = {name: p.data for name, p in self.params.items()}
        grads = {name: p.grad for name, p in self.params.items()}
        updated, _ = adam_step(values, grads, self.state)
        for name, param in self.params.items():
            param.data = updated[name]

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-3
    decay_factor: float = 0.7
    step_size: int = 20

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigError(f"decay_factor must lie in (0, 1), got {self.decay_factor}")
        if self.step_size < 1:
            raise ConfigError(f"step_size must be >= 1, got {self.step_size}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """base_lr * decay_factor ** floor(epoch / step_size)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return schedule.base_lr * math.pow(schedule.decay_factor, epoch // schedule.step_size)

