"""
Модели для внутренней логики (datasets, checkpoints, метрики, manifests).
"""

from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

# ===== POINT CLOUDS =====

@dataclass
class Split:
    """points (S, N, 3) float32, labels (S,) int64."""
    points: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class Dataset:
    name: str
    class_names: List[str]
    points_per_cloud: int
    seed: int
    train: Split
    test: Split

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> Split:
        if name not in ("train", "test"):
            raise KeyError(name)
        return self.train if name == "train" else self.test


@dataclass
class PointCloudBatch:
    points: np.ndarray  # (B, N, 3)
    labels: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def areas(self) -> np.ndarray:
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


class DatasetManifest(BaseModel):
    """Sidecar `<file>.json` next to a PCDS file."""
    format_version: int = 1
    name: str
    source: Literal["synthetic", "off"] = "synthetic"
    class_names: List[str]
    points_per_cloud: int
    seed: int
    num_train: int
    num_test: int
    generator: Dict[str, Any] = Field(default_factory=dict)


# ===== CHECKPOINTS =====

@dataclass
class Checkpoint:
    """Named tensors (parameters and normalization buffers) plus run metadata."""
    tensors: Dict[str, np.ndarray]
    digest: bytes
    epoch: int
    metrics: Dict[str, Any] = field(default_factory=dict)
    architecture: str = ""


# ===== METRICS =====

CSV_COLUMNS = ("epoch", "split", "ce_tiny", "ce_aug", "kd", "hint", "total", "oa", "lr", "beta", "alpha", "selection")
CSV_HEADER = ",".join(CSV_COLUMNS)


class EpochMetrics(BaseModel):
    epoch: int = Field(ge=0)
    split: Literal["train", "test"]
    ce_tiny: float = 0.0
    ce_aug: float = 0.0
    kd: float = 0.0
    hint: float = 0.0
    total: float = 0.0
    oa: float = Field(default=0.0, ge=0.0, le=1.0)
    lr: float = 0.0
    beta: float = 0.0
    alpha: float = 0.0
    selection: str = ""

    def csv_fields(self) -> List[str]:
        values = [self.ce_tiny, self.ce_aug, self.kd, self.hint, self.total, self.oa]
        parts = [str(self.epoch), self.split]
        parts.extend(f"{v:.8f}" for v in values)
        parts.append(f"{self.lr:.8g}")
        parts.append(f"{self.beta:.8f}")
        parts.append(f"{self.alpha:.8f}")
        parts.append(self.selection)
        return parts


# ===== RUN MANIFEST =====

class RunManifest(BaseModel):
    tool_version: str
    command: str
    status: Literal["running", "completed", "failed"] = "running"
    plan: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    config_digests: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    started_at: datetime
    finished_at: Optional[datetime] = None
    error: Optional[str] = None


# ===== GENERATOR SPEC =====

PRIMITIVES = ("sphere", "cube", "cylinder", "cone", "torus", "tetrahedron", "ellipsoid", "disk")


class SyntheticSpec(BaseModel):
    """Параметры синтетического датасета."""
    classes: List[str] = Field(default_factory=lambda: list(PRIMITIVES))
    train_per_class: int = Field(default=100, ge=1)
    test_per_class: int = Field(default=30, ge=0)
    points_per_cloud: int = Field(default=256, ge=16)
    noise_sigma: float = Field(default=0.01, ge=0.0)
