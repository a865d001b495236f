"""
Distillation losses: logit KD, stage-2 blend, hint (feature) distillation,
mutual learning and the end-to-end objective.

Teacher-side inputs are always treated as constants: they may be passed as
arrays or tensors and are detached before use. All losses are batch means.
"""

from typing import Dict, Optional, Tuple, Union

import numpy as np

from t3dnet.core.errors import ConfigError, DimensionError
from t3dnet.core.tensor import Tensor
from t3dnet.models.plan import AlphaSchedule
from t3dnet.services.augmentation import blend_stage1

ArrayOrTensor = Union[np.ndarray, Tensor]


def _constant(value: ArrayOrTensor) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def kl_divergence(teacher_logits: ArrayOrTensor, student_logits: Tensor) -> Tensor:
    """
    mean_b sum_c p_t * (log p_t - log p_s), p = softmax(logits).

    Raises:
        DimensionError: shapes differ or are not B x C
    """
    teacher = _constant(teacher_logits)
    if teacher.shape != student_logits.shape or student_logits.ndim != 2:
        raise DimensionError(f"teacher logits {teacher.shape} vs student logits {student_logits.shape}")
    log_p = _log_softmax_np(teacher.astype(np.float64))
    p = np.exp(log_p)
    # p * log p with p underflowing to 0 contributes 0
    entropy_term = np.where(p > 0.0, p * log_p, 0.0).sum(axis=-1)
    dtype = student_logits.dtype
    cross = (Tensor(p.astype(dtype)) * student_logits.log_softmax()).sum(axis=-1)
    return (Tensor(entropy_term.astype(dtype)) - cross).mean()


def kd_loss(teacher_logits: ArrayOrTensor, student_logits: Tensor, T: float) -> Tensor:
    """
    T^2 * KL(softmax(z_t / T) || softmax(z_s / T)).

    Raises:
        ConfigError: T <= 0
    """
    if not T > 0:
        raise ConfigError(f"temperature must be positive, got {T}")
    if T == 1.0:
        return kl_divergence(teacher_logits, student_logits)
    teacher = _constant(teacher_logits) / T
    return (T * T) * kl_divergence(teacher, student_logits / T)


def _check_weight(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def stage2_loss(kd: Tensor, ce_tiny: Tensor, alpha: float) -> Tensor:
    """alpha * kd + (1 - alpha) * ce_tiny."""
    _check_weight("alpha", alpha)
    if alpha == 0.0:
        return ce_tiny
    if alpha == 1.0:
        return kd
    return alpha * kd + (1.0 - alpha) * ce_tiny


# ===== HINT =====

class HintMap:
    """
    Trainable linear map from the student feature width to the teacher's.

    Identity init is used when widths agree; otherwise (or with
    init="gaussian") weights are N(0, init_std^2) from `seed`.
    """

    PARAM_NAME = "hint.weight"

    def __init__(
        self,
        student_width: int,
        teacher_width: int,
        init: str = "identity",
        init_std: float = 0.02,
        seed: int = 0,
        dtype: np.dtype = np.float32,
    ) -> None:
        if student_width < 1 or teacher_width < 1:
            raise ConfigError(f"hint widths must be >= 1, got {student_width} -> {teacher_width}")
        if init == "identity" and student_width == teacher_width:
            weight = np.eye(student_width)
        else:
            weight = np.random.default_rng(seed).standard_normal((student_width, teacher_width)) * init_std
        self.weight = Tensor(weight.astype(dtype), requires_grad=True)

    @property
    def in_width(self) -> int:
        return self.weight.shape[0]

    @property
    def out_width(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> Dict[str, Tensor]:
        return {self.PARAM_NAME: self.weight}

    def __call__(self, student_feat: Tensor) -> Tensor:
        if student_feat.shape[-1] != self.in_width:
            raise DimensionError(f"hint map expects width {self.in_width}, got {student_feat.shape[-1]}")
        return student_feat @ self.weight


def hint_loss(teacher_feat: ArrayOrTensor, student_feat: Tensor, hint_map: HintMap) -> Tensor:
    """
    1/2 * mean_b sum_f (u_t - r(u_s))^2.

    Raises:
        DimensionError: mapped width differs from the teacher feature width
    """
    teacher = _constant(teacher_feat)
    if teacher.shape[-1] != hint_map.out_width:
        raise DimensionError(f"hint map outputs width {hint_map.out_width}, teacher feature has {teacher.shape[-1]}")
    mapped = hint_map(student_feat)
    if mapped.shape != teacher.shape:
        raise DimensionError(f"teacher feature {teacher.shape} vs mapped student feature {mapped.shape}")
    diff = Tensor(teacher.astype(mapped.dtype)) - mapped
    return 0.5 * (diff * diff).sum(axis=-1).mean()


# ===== MUTUAL =====

def mutual_losses(tiny_logits: Tensor, aug_logits: Tensor, T: float) -> Tuple[Tensor, Tensor]:
    """
    (aug -> tiny, tiny -> aug) KD pair; each side sees the other as a constant.

    Raises:
        DimensionError: shapes differ
    """
    if tiny_logits.shape != aug_logits.shape:
        raise DimensionError(f"tiny logits {tiny_logits.shape} vs augmented logits {aug_logits.shape}")
    for_tiny = kd_loss(aug_logits.data, tiny_logits, T)
    for_aug = kd_loss(tiny_logits.data, aug_logits, T)
    return for_tiny, for_aug


# ===== END-TO-END =====

def alpha_at(schedule: AlphaSchedule, epoch: int, warmup_epochs: int, total_epochs: int) -> float:
    """Scheduled alpha after the warm-up (the warm-up itself is handled by effective_alpha)."""
    if schedule.mode == "static":
        return schedule.alpha_start
    span = total_epochs - warmup_epochs
    if span <= 1:
        return schedule.alpha_start
    progress = min(max(epoch - warmup_epochs, 0), span - 1) / (span - 1)
    return schedule.alpha_start + (schedule.alpha_end - schedule.alpha_start) * progress


def effective_alpha(alpha: float, epoch: int, warmup_epochs: int) -> float:
    """0 during the warm-up, alpha afterwards."""
    if warmup_epochs < 0:
        raise ConfigError(f"warm-up must be >= 0 epochs, got {warmup_epochs}")
    return 0.0 if epoch < warmup_epochs else alpha


def end_to_end_loss(
    kd: Optional[Tensor],
    ce_tiny: Tensor,
    ce_aug: Optional[Tensor],
    alpha: float,
    beta: float,
    epoch: int,
    warmup_epochs: int,
) -> Tensor:
    """
    alpha * kd + (1 - alpha) * (beta * ce_tiny + (1 - beta) * ce_aug), with
    alpha forced to 0 while epoch < warmup_epochs (kd may then be None).
    """
    _check_weight("alpha", alpha)
    a = effective_alpha(alpha, epoch, warmup_epochs)
    inner = blend_stage1(ce_tiny, ce_aug, beta)
    if a == 0.0:
        return inner
    if kd is None:
        raise ConfigError("end-to-end loss needs the kd term after the warm-up")
    if a == 1.0:
        return kd
    return a * kd + (1.0 - a) * inner
