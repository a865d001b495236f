"""Schemas: architecture configs, run plans, internal records."""

from t3dnet.models.architecture import (
    HEAD_OUT,
    InputSegment,
    LayerKind,
    LayerSpec,
    ScaleSpec,
    StageSpec,
    HeadSpec,
    SupernetSpec,
    scale_width,
)
from t3dnet.models.internal import (
    CSV_COLUMNS,
    CSV_HEADER,
    Checkpoint,
    Dataset,
    DatasetManifest,
    EpochMetrics,
    PointCloudBatch,
    PRIMITIVES,
    RunManifest,
    Split,
    SyntheticSpec,
    TriMesh,
)
from t3dnet.models.plan import (
    AlphaSchedule,
    AugmentConfig,
    BetaSchedule,
    EndToEndConfig,
    HintConfig,
    KDConfig,
    OptimizerConfig,
    Seeds,
    TrainPlan,
)

__all__ = [
    "AlphaSchedule",
    "AugmentConfig",
    "BetaSchedule",
    "CSV_COLUMNS",
    "CSV_HEADER",
    "Checkpoint",
    "Dataset",
    "DatasetManifest",
    "EndToEndConfig",
    "EpochMetrics",
    "HEAD_OUT",
    "HeadSpec",
    "HintConfig",
    "InputSegment",
    "KDConfig",
    "LayerKind",
    "LayerSpec",
    "OptimizerConfig",
    "PRIMITIVES",
    "PointCloudBatch",
    "RunManifest",
    "ScaleSpec",
    "Seeds",
    "Split",
    "SyntheticSpec",
    "StageSpec",
    "SupernetSpec",
    "TrainPlan",
    "TriMesh",
    "scale_width",
]
