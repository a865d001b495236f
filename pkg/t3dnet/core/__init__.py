"""Tensor engine, optimizer and cross-cutting helpers."""

from t3dnet.core.errors import (
    CheckpointMismatchError,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    GeometryError,
    LabelIndexError,
    NumericError,
    ParseError,
    ReportError,
    T3DNetError,
    TrainingDivergedError,
)
from t3dnet.core.tensor import Tensor, no_grad

__all__ = [
    "CheckpointMismatchError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "GeometryError",
    "LabelIndexError",
    "NumericError",
    "ParseError",
    "ReportError",
    "T3DNetError",
    "Tensor",
    "TrainingDivergedError",
    "no_grad",
]
