"""
Central finite-difference gradient checks (double precision).
"""

from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np

from t3dnet.core.errors import ContractError
from t3dnet.core.tensor import Tensor, no_grad


def numerical_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, eps: float) -> np.ndarray:
    target = inputs[index]
    target.data = np.ascontiguousarray(target.data)
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        with no_grad():
            plus = fn(*inputs).item()
            flat[i] = original - eps
            minus = fn(*inputs).item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    rtol: float = 1e-3,
    raise_on_failure: bool = False,
) -> List[float]:
    """
    Compare backward() against central differences for every input that
    requires grad.

    Args:
        fn: Scalar-valued function of the inputs; rebuilt for each probe
        inputs: float64 tensors
        eps: Finite-difference step
        rtol: Tolerance used when raise_on_failure is set

    Returns:
        Max relative error per input (0.0 for inputs without grad)
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractError(f"gradient checks need float64 inputs, got {t.dtype}")
        t.zero_grad()

    loss = fn(*inputs)
    loss.backward()
    errors: List[float] = []
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            errors.append(0.0)
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(fn, inputs, i, eps)
        err = relative_error(analytic, numeric)
        if raise_on_failure and err > rtol:
            raise ContractError(f"gradient mismatch on input {i}: relative error {err:.3e} > {rtol:.0e}")
        errors.append(err)
    return errors
