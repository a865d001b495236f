"""
Tiny network augmentation (stage 1).

Every scalable layer gets r width options from its tiny width up to its full
width. Once per epoch one option is drawn per layer, independently and
uniformly; the resulting augmented subnet always contains the tiny one
because every option is >= the tiny width and slices are leading slices.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, Mapping, Optional, Tuple, Union

import numpy as np

from t3dnet.core.errors import ConfigError, DimensionError
from t3dnet.core.functional import cross_entropy
from t3dnet.core.tensor import Tensor
from t3dnet.models.architecture import SupernetSpec, scale_width
from t3dnet.models.plan import BetaSchedule
from t3dnet.nn.supernet import SubnetSelection, make_selection, weighted_layers


@dataclass(frozen=True)
class ExpandOptions:
    """Ordered width options per scalable layer (pinned layers are absent)."""
    spec: SupernetSpec
    options: Mapping[str, Tuple[int, ...]]

    @property
    def r(self) -> int:
        return len(next(iter(self.options.values()))) if self.options else 0

    def tiny(self) -> SubnetSelection:
        return make_selection(self.spec, {name: opts[0] for name, opts in self.options.items()}, label="tiny")

    def largest(self) -> SubnetSelection:
        return make_selection(self.spec, {name: opts[-1] for name, opts in self.options.items()}, label="full")

    def width_options(self) -> Dict[str, Tuple[int, ...]]:
        """Normalization widths each layer needs (keys match Supernet owners)."""
        return dict(self.options)

    def __iter__(self) -> Iterator[Tuple[str, Tuple[int, ...]]]:
        return iter(self.options.items())


def _linear_options(tiny: int, full: int, r: int) -> Tuple[int, ...]:
    return tuple(tiny + (i * (full - tiny)) // (r - 1) for i in range(r))


def _geometric_options(tiny: int, full: int, r: int) -> Tuple[int, ...]:
    ratio = full / tiny
    inner = [int(np.floor(tiny * ratio ** (i / (r - 1)))) for i in range(1, r - 1)]
    return (tiny, *inner, full)


def build_expand_options(
    spec: SupernetSpec,
    r: Optional[int] = None,
    mode: Optional[str] = None,
    width_scale: Union[Fraction, float, str, None] = None,
) -> ExpandOptions:
    """
    Width options from tiny to full width for every scalable layer.

    linear: tiny + floor(i * (full - tiny) / (r - 1)); for r=3 the middle
    option is floor((tiny + full) / 2). geometric: floor of geometric spacing.

    Raises:
        ConfigError: r < 2, tiny == full on a scalable layer, or options that
            are not strictly increasing
    """
    r = spec.expand_ratio if r is None else r
    mode = spec.expand_mode if mode is None else mode
    scale = spec.width_scale_tiny if width_scale is None else width_scale
    if r < 2:
        raise ConfigError(f"expand ratio r must be >= 2, got {r}")
    if mode not in ("linear", "geometric"):
        raise ConfigError(f"unknown expand mode '{mode}'")

    options: Dict[str, Tuple[int, ...]] = {}
    for layer in weighted_layers(spec):
        if not layer.scalable_out:
            continue
        full = layer.full_out
        tiny = scale_width(full, scale)
        if tiny >= full:
            raise ConfigError(f"layer {layer.name}: tiny width {tiny} equals full width {full}, nothing to augment")
        opts = _linear_options(tiny, full, r) if mode == "linear" else _geometric_options(tiny, full, r)
        if any(b <= a for a, b in zip(opts, opts[1:])):
            raise ConfigError(f"layer {layer.name}: options {list(opts)} are not strictly increasing (r={r})")
        options[layer.name] = opts
    return ExpandOptions(spec=spec, options=options)


def sample_selection(options: ExpandOptions, rng: np.random.Generator) -> SubnetSelection:
    """One independent uniform draw per layer, in layer order."""
    widths = {name: opts[int(rng.integers(0, len(opts)))] for name, opts in options.options.items()}
    return make_selection(options.spec, widths)


# ===== SCHEDULE =====

def beta_at(schedule: BetaSchedule, epoch: int, total_epochs: Optional[int] = None) -> float:
    """
    Tiny-branch weight for `epoch` (0-based).

    `total_epochs` is used when the schedule's own total_epochs is 0. Linear
    decay hits beta_start at epoch 0 and beta_end exactly at the last epoch.
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    if schedule.mode == "static":
        return schedule.beta_start
    total = schedule.total_epochs or (total_epochs or 0)
    if total <= 1:
        return schedule.beta_start
    if epoch >= total - 1:
        return schedule.beta_end
    value = schedule.beta_start + (schedule.beta_end - schedule.beta_start) * epoch / (total - 1)
    low, high = sorted((schedule.beta_start, schedule.beta_end))
    return min(max(value, low), high)


# ===== LOSS =====

def _check_weight(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def blend_stage1(ce_tiny: Tensor, ce_aug: Optional[Tensor], beta: float) -> Tensor:
    """beta * ce_tiny + (1 - beta) * ce_aug; the aug term may be absent when beta == 1."""
    _check_weight("beta", beta)
    if beta == 1.0 or ce_aug is None:
        if ce_aug is None and beta != 1.0:
            raise ConfigError(f"beta={beta} needs the augmented loss term")
        return ce_tiny
    return beta * ce_tiny + (1.0 - beta) * ce_aug


def stage1_loss(logits_tiny: Tensor, logits_aug: Tensor, labels: np.ndarray, beta: float) -> Tensor:
    """
    beta * CE(tiny) + (1 - beta) * CE(aug).

    Raises:
        DimensionError: the two logit tensors differ in shape
    """
    if logits_tiny.shape != logits_aug.shape:
        raise DimensionError(f"tiny logits {logits_tiny.shape} and augmented logits {logits_aug.shape} differ")
    ce_tiny = cross_entropy(logits_tiny, labels)
    if beta == 1.0:
        return blend_stage1(ce_tiny, None, beta)
    return blend_stage1(ce_tiny, cross_entropy(logits_aug, labels), beta)
