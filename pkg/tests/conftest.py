"""
Shared fixtures: a micro architecture, small synthetic datasets and an
isolated mesh-sample cache.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from t3dnet.config import settings
from t3dnet.core.logging import configure_logging
from t3dnet.models.architecture import SupernetSpec
from t3dnet.services.data_service import build_spec, generate_synthetic
from t3dnet.services.mesh_cache import reset_mesh_cache
from t3dnet.storage.pcds import write_dataset

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / "data" / "configs"

MICRO_CLASSES = ["sphere", "cube", "cone"]

MICRO_CONFIG = {
    "name": "pointnet2-msg-micro",
    "num_classes": 3,
    "stages": [
        {
            "npoint": 8,
            "scales": [
                {"radius": 0.4, "nsample": 4, "mlp": [8, 16]},
                {"radius": 0.8, "nsample": 8, "mlp": [8, 16]},
            ],
        },
        {"group_all": True, "scales": [{"mlp": [16, 32]}]},
    ],
    "head": {"hidden": [16], "dropout": 0.0},
    "width_scale_tiny": "1/4",
    "expand_ratio": 3,
    "expand_mode": "linear",
}


@pytest.fixture(autouse=True)
def _isolated_runtime(tmp_path, monkeypatch):
    """Quiet logs bound to this test's stderr, private cache, no prefetch threads."""
    configure_logging("WARNING", "console")
    monkeypatch.setattr(settings, "cache_dir", str(tmp_path / "mesh-cache"))
    monkeypatch.setattr(settings, "prefetch_depth", 0)
    reset_mesh_cache()
    yield
    reset_mesh_cache()


@pytest.fixture
def micro_spec():
    return SupernetSpec.model_validate(MICRO_CONFIG)


@pytest.fixture
def micro_config_file(tmp_path):
    path = tmp_path / "micro.json"
    path.write_text(json.dumps(MICRO_CONFIG), encoding="utf-8")
    return path


@pytest.fixture
def canonical_spec():
    return SupernetSpec.from_file(str(CONFIG_DIR / "canonical.json"))


@pytest.fixture
def micro_dataset():
    spec = build_spec(classes=MICRO_CLASSES, train_per_class=4, test_per_class=2, points_per_cloud=32)
    return generate_synthetic(spec, seed=0, name="micro")


@pytest.fixture
def micro_dataset_file(tmp_path, micro_dataset):
    return write_dataset(micro_dataset, tmp_path / "micro.pcds")


@pytest.fixture
def points_batch():
    """Two normalized clouds of 32 points."""
    rng = np.random.default_rng(7)
    pts = rng.standard_normal((2, 32, 3))
    pts /= np.linalg.norm(pts, axis=-1, keepdims=True).max(axis=1, keepdims=True)
    return pts
