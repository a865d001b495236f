"""
Pydantic модели для конфигурации запусков (TrainPlan и его части).
"""

from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from t3dnet.core.errors import ConfigError

Mode = Literal[
    "teacher",
    "tiny-baseline",
    "netaug-only",
    "kd-only",
    "two-stage",
    "hint",
    "mutual",
    "end2end",
]

MODE_ALIASES: Dict[str, str] = {
    "tiny": "tiny-baseline",
    "netaug": "netaug-only",
    "kd": "kd-only",
}

# Modes that consume a trained full-width teacher checkpoint
TEACHER_MODES = ("kd-only", "two-stage", "hint", "end2end")


def canonical_mode(mode: str) -> str:
    return MODE_ALIASES.get(mode, mode)


# ===== SCHEDULES =====

class BetaSchedule(BaseModel):
    """Вес tiny-ветки в stage-1 loss."""
    mode: Literal["static", "linear-decay"] = Field(default="linear-decay")
    beta_start: float = Field(default=0.9, ge=0.0, le=1.0)
    beta_end: float = Field(default=0.5, ge=0.0, le=1.0)
    total_epochs: int = Field(default=0, ge=0, description="0 = длина stage 1")


class AlphaSchedule(BaseModel):
    """α for the end-to-end loop (applied after the warm-up)."""
    mode: Literal["static", "linear-decay"] = Field(default="static")
    alpha_start: float = Field(default=0.5, ge=0.0, le=1.0)
    alpha_end: float = Field(default=0.5, ge=0.0, le=1.0)


# ===== COMPONENT CONFIGS =====

class OptimizerConfig(BaseModel):
    lr: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    decay_factor: float = Field(default=0.7, gt=0, lt=1)
    step_size: int = Field(default=20, ge=1)


class AugmentConfig(BaseModel):
    r: Optional[int] = Field(default=None, ge=2, description="None = из конфига модели")
    expand_mode: Optional[Literal["linear", "geometric"]] = None
    beta: BetaSchedule = Field(default_factory=BetaSchedule)


class KDConfig(BaseModel):
    T: float = Field(default=1.0, gt=0, description="Температура")
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)


class HintConfig(BaseModel):
    init: Literal["identity", "gaussian"] = "identity"
    init_std: float = Field(default=0.02, gt=0)


class EndToEndConfig(BaseModel):
    warmup_epochs: int = Field(default=10, ge=0)
    alpha: AlphaSchedule = Field(default_factory=AlphaSchedule)


class Seeds(BaseModel):
    init: int = Field(default=0, ge=0)
    data: int = Field(default=0, ge=0)
    subnet: int = Field(default=0, ge=0)


# ===== PLAN =====

class TrainPlan(BaseModel):
    """Все гиперпараметры одного запуска."""
    mode: Mode = "two-stage"
    epochs_stage1: int = Field(default=30, ge=0)
    epochs_stage2: int = Field(default=30, ge=0)
    batch_size: int = Field(default=16, ge=1)

    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    kd: KDConfig = Field(default_factory=KDConfig)
    hint: HintConfig = Field(default_factory=HintConfig)
    end2end: EndToEndConfig = Field(default_factory=EndToEndConfig)
    seeds: Seeds = Field(default_factory=Seeds)

    dataset: Optional[str] = None
    architecture: Optional[str] = None
    width_scale: Optional[str] = Field(default=None, description="Переопределение width_scale_tiny")
    teacher_checkpoint: Optional[str] = None
    output_dir: Optional[str] = None
    allow_digest_mismatch: bool = False

    @field_validator("mode", mode="before")
    @classmethod
    def _alias_mode(cls, value: Any) -> Any:
        return canonical_mode(value) if isinstance(value, str) else value

    @model_validator(mode="after")
    def _check_requirements(self) -> "TrainPlan":
        if self.mode == "two-stage" and (self.epochs_stage1 < 1 or self.epochs_stage2 < 1):
            raise ValueError("two-stage needs epochs_stage1 > 0 and epochs_stage2 > 0")
        if self.mode in TEACHER_MODES and not self.teacher_checkpoint:
            raise ValueError(f"mode {self.mode} needs a teacher checkpoint (--teacher)")
        return self

    @property
    def needs_teacher(self) -> bool:
        return self.mode in TEACHER_MODES

    @classmethod
    def resolve(cls, base: Optional[Dict[str, Any]] = None, overrides: Optional[Dict[str, Any]] = None) -> "TrainPlan":
        """
        Merge a plan file with flag overrides (flags win) and validate.

        Overrides use dotted keys for nested fields, e.g. "kd.T".

        Raises:
            ConfigError: validation failed
        """
        data = merge_overrides(base, overrides)
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            details = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or 'plan'}: {err['msg']}" for err in exc.errors()
            )
            raise ConfigError(f"invalid train plan: {details}") from None


def _deep_copy(data: Dict[str, Any]) -> Dict[str, Any]:
    return {k: _deep_copy(v) if isinstance(v, dict) else v for k, v in data.items()}


def merge_overrides(base: Optional[Dict[str, Any]], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Copy of `base` with dotted-key overrides applied; None values are skipped."""
    data: Dict[str, Any] = _deep_copy(base or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        target = data
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return data
