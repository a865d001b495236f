"""
Архитектура supernet: stages, head, layer enumeration.

The config file (JSON) describes the largest network; every smaller network
(tiny model, augmented subnets, scaled rows of the cost report) is derived
from it by shrinking scalable channel widths.
"""

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, model_validator

from t3dnet.core.errors import ConfigError

COORD_DIM = 3


def parse_fraction(value: Any) -> Fraction:
    """Accept "1/8", 0.125, 1 or a Fraction; result must lie in (0, 1]."""
    if isinstance(value, Fraction):
        frac = value
    elif isinstance(value, bool):
        raise ValueError("width scale must be a number or 'p/q' string")
    elif isinstance(value, int):
        frac = Fraction(value)
    elif isinstance(value, float):
        frac = Fraction(value).limit_denominator(1_000_000)
    elif isinstance(value, str):
        try:
            frac = Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"invalid width scale '{value}'") from None
    else:
        raise ValueError(f"invalid width scale {value!r}")
    if not 0 < frac <= 1:
        raise ValueError(f"width scale must lie in (0, 1], got {frac}")
    return frac


def format_fraction(frac: Fraction) -> str:
    return str(frac.numerator) if frac.denominator == 1 else f"{frac.numerator}/{frac.denominator}"


WidthScale = Annotated[
    Fraction,
    BeforeValidator(parse_fraction),
    PlainSerializer(format_fraction, return_type=str),
]


def scale_width(width: int, scale: Union[Fraction, float, str]) -> int:
    """max(1, round-half-up(width * scale))."""
    frac = scale if isinstance(scale, Fraction) else parse_fraction(scale)
    return max(1, math.floor(Fraction(width) * frac + Fraction(1, 2)))


# ===== CONFIG SCHEMA =====

class ScaleSpec(BaseModel):
    """One grouping scale of a set-abstraction stage."""
    radius: Optional[float] = Field(default=None, gt=0)
    nsample: Optional[int] = Field(default=None, ge=1)
    mlp: List[int] = Field(min_length=1)

    @model_validator(mode="after")
    def _positive_widths(self) -> "ScaleSpec":
        if any(w < 1 for w in self.mlp):
            raise ValueError(f"MLP widths must be >= 1, got {self.mlp}")
        return self


class StageSpec(BaseModel):
    """Set-abstraction stage (MSG). A group-all stage pools every point once."""
    npoint: Optional[int] = Field(default=None, ge=1)
    group_all: bool = False
    scales: List[ScaleSpec] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_grouping(self) -> "StageSpec":
        if self.group_all:
            if len(self.scales) != 1:
                raise ValueError("group-all stage takes exactly one scale")
        else:
            if self.npoint is None:
                raise ValueError("stage needs npoint unless group_all is set")
            for scale in self.scales:
                if scale.radius is None or scale.nsample is None:
                    raise ValueError("every scale of a sampled stage needs radius and nsample")
        return self

    @property
    def out_width(self) -> int:
        return sum(s.mlp[-1] for s in self.scales)


class HeadSpec(BaseModel):
    hidden: List[int] = Field(default_factory=lambda: [512, 256])
    dropout: float = Field(default=0.4, ge=0.0, lt=1.0)


class SupernetSpec(BaseModel):
    """Описание наибольшей сети W_L."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = "pointnet2-msg"
    num_classes: int = Field(ge=2)
    stages: List[StageSpec] = Field(min_length=1)
    head: HeadSpec = Field(default_factory=HeadSpec)
    width_scale_tiny: WidthScale = Fraction(1, 8)
    expand_ratio: int = Field(default=3, ge=2)
    expand_mode: Literal["linear", "geometric"] = "linear"

    @model_validator(mode="after")
    def _group_all_last(self) -> "SupernetSpec":
        for stage in self.stages[:-1]:
            if stage.group_all:
                raise ValueError("only the last stage may be group-all")
        npoints = [s.npoint for s in self.stages if not s.group_all]
        if any(b > a for a, b in zip(npoints, npoints[1:])):
            raise ValueError(f"stage npoints must be non-increasing, got {npoints}")
        return self

    @classmethod
    def from_file(cls, path: str) -> "SupernetSpec":
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = f.read()
        except FileNotFoundError:
            raise ConfigError(f"model config not found: {path}") from None
        try:
            return cls.model_validate_json(raw)
        except ValueError as exc:
            raise ConfigError(f"invalid model config {path}: {exc}") from None

    @property
    def max_npoint(self) -> int:
        return max((s.npoint or 1) for s in self.stages)

    @property
    def feature_width(self) -> int:
        """Width of the pooled global feature that feeds the head."""
        return self.stages[-1].out_width

    def architecture_dict(self) -> Dict[str, Any]:
        return {
            "num_classes": self.num_classes,
            "stages": [s.model_dump() for s in self.stages],
            "head": self.head.model_dump(),
        }

    def digest(self) -> bytes:
        """sha256 over the architecture (stages, head, classes)."""
        canonical = json.dumps(self.architecture_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).digest()

    def scaled(self, width_scale: Union[Fraction, float, str]) -> "SupernetSpec":
        """Copy with every scalable width shrunk; class count stays pinned."""
        frac = width_scale if isinstance(width_scale, Fraction) else parse_fraction(width_scale)
        stages = [
            StageSpec(
                npoint=s.npoint,
                group_all=s.group_all,
                scales=[
                    ScaleSpec(radius=sc.radius, nsample=sc.nsample, mlp=[scale_width(w, frac) for w in sc.mlp])
                    for sc in s.scales
                ],
            )
            for s in self.stages
        ]
        head = HeadSpec(hidden=[scale_width(w, frac) for w in self.head.hidden], dropout=self.head.dropout)
        return self.model_copy(update={"stages": stages, "head": head})

    def with_widths(self, out_widths: Dict[str, int]) -> "SupernetSpec":
        """Copy whose full widths are the given per-layer output widths."""
        stages = []
        for si, s in enumerate(self.stages):
            scales = []
            for ci, sc in enumerate(s.scales):
                mlp = [out_widths.get(conv_name(si, ci, k), w) for k, w in enumerate(sc.mlp)]
                scales.append(ScaleSpec(radius=sc.radius, nsample=sc.nsample, mlp=mlp))
            stages.append(StageSpec(npoint=s.npoint, group_all=s.group_all, scales=scales))
        hidden = [out_widths.get(fc_name(k), w) for k, w in enumerate(self.head.hidden)]
        head = HeadSpec(hidden=hidden, dropout=self.head.dropout)
        return self.model_copy(update={"stages": stages, "head": head, "width_scale_tiny": Fraction(1)})

    def layers(self) -> List["LayerSpec"]:
        return enumerate_layers(self)


# ===== LAYER ENUMERATION =====

class LayerKind(str, Enum):
    CONV = "shared-mlp-conv"
    LINEAR = "linear"
    NORM = "norm"
    POOL = "pool"
    DROPOUT = "dropout"


@dataclass(frozen=True)
class InputSegment:
    """A contiguous block of input channels; source None marks pinned xyz."""
    source: Optional[str]
    width: int


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: LayerKind
    full_in: int
    full_out: int
    scalable_in: bool
    scalable_out: bool
    segments: Tuple[InputSegment, ...] = ()
    stage: Optional[int] = None
    owner: Optional[str] = None  # conv/linear whose output a norm/pool/dropout follows

    @property
    def has_weights(self) -> bool:
        return self.kind in (LayerKind.CONV, LayerKind.LINEAR)


def conv_name(stage: int, scale: int, k: int) -> str:
    return f"sa{stage + 1}.s{scale}.mlp{k}"


def fc_name(k: int) -> str:
    return f"head.fc{k}"


HEAD_OUT = "head.out"


def enumerate_layers(spec: SupernetSpec) -> List[LayerSpec]:
    """All layers in forward order, with their input segments resolved."""
    layers: List[LayerSpec] = []
    # segments produced by the previous stage (xyz is prepended per stage)
    prev_segments: List[InputSegment] = []
    for si, stage in enumerate(spec.stages):
        stage_in = (InputSegment(None, COORD_DIM),) + tuple(prev_segments)
        produced: List[InputSegment] = []
        for ci, scale in enumerate(stage.scales):
            segments = stage_in
            for k, width in enumerate(scale.mlp):
                name = conv_name(si, ci, k)
                full_in = sum(seg.width for seg in segments)
                layers.append(LayerSpec(
                    name=name,
                    kind=LayerKind.CONV,
                    full_in=full_in,
                    full_out=width,
                    scalable_in=any(seg.source is not None for seg in segments),
                    scalable_out=True,
                    segments=segments,
                    stage=si,
                ))
                layers.append(LayerSpec(
                    name=f"{name}.bn", kind=LayerKind.NORM, full_in=width, full_out=width,
                    scalable_in=True, scalable_out=True, stage=si, owner=name,
                ))
                segments = (InputSegment(name, width),)
            last = conv_name(si, ci, len(scale.mlp) - 1)
            layers.append(LayerSpec(
                name=f"sa{si + 1}.s{ci}.pool", kind=LayerKind.POOL, full_in=scale.mlp[-1],
                full_out=scale.mlp[-1], scalable_in=True, scalable_out=True, stage=si, owner=last,
            ))
            produced.append(InputSegment(last, scale.mlp[-1]))
        prev_segments = produced

    segments = tuple(prev_segments)
    for k, width in enumerate(spec.head.hidden):
        name = fc_name(k)
        layers.append(LayerSpec(
            name=name, kind=LayerKind.LINEAR, full_in=sum(s.width for s in segments), full_out=width,
            scalable_in=True, scalable_out=True, segments=segments,
        ))
        layers.append(LayerSpec(
            name=f"{name}.bn", kind=LayerKind.NORM, full_in=width, full_out=width,
            scalable_in=True, scalable_out=True, owner=name,
        ))
        layers.append(LayerSpec(
            name=f"head.drop{k}", kind=LayerKind.DROPOUT, full_in=width, full_out=width,
            scalable_in=True, scalable_out=True, owner=name,
        ))
        segments = (InputSegment(name, width),)
    layers.append(LayerSpec(
        name=HEAD_OUT, kind=LayerKind.LINEAR, full_in=sum(s.width for s in segments),
        full_out=spec.num_classes, scalable_in=True, scalable_out=False, segments=segments,
    ))
    return layers
