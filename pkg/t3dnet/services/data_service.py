"""
Synthetic point-cloud datasets and batching.

Every sample owns its RNG stream, derived from (seed, split, class, index),
so content never depends on generation order.
"""

import math
from typing import Any, Callable, Dict, Iterator, List, Optional

import numpy as np
from pydantic import ValidationError

from t3dnet.core.errors import ConfigError, GeometryError
from t3dnet.core.logging import get_logger
from t3dnet.models.internal import (
    PRIMITIVES,
    Dataset,
    PointCloudBatch,
    Split,
    SyntheticSpec,
)

logger = get_logger(__name__)

SPLIT_IDS = {"train": 0, "test": 1}

TORUS_MAJOR = 1.0
TORUS_MINOR = 0.35
ELLIPSOID_AXES = (1.0, 0.6, 0.35)


# ===== PRIMITIVE SURFACES =====

def _antithetic(draw: Callable[[int, np.random.Generator], np.ndarray]) -> Callable[[int, np.random.Generator], np.ndarray]:
    """Draw ceil(n/2) points and append their mirror images through the origin."""
    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        half = draw((n + 1) // 2, rng)
        return np.concatenate([half, -half], axis=0)[:n]
    return sample


def _uniform_disk(n: int, rng: np.random.Generator) -> np.ndarray:
    r = np.sqrt(rng.random(n))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def _sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(n: int, rng: np.random.Generator) -> np.ndarray:
    pts = rng.uniform(-1.0, 1.0, (n, 3))
    axis = rng.integers(0, 3, n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    pts[np.arange(n), axis] = sign
    return pts


def _cylinder(n: int, rng: np.random.Generator) -> np.ndarray:
    # lateral area 4*pi, caps 2*pi
    lateral = rng.random(n) < (2.0 / 3.0)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.uniform(-1.0, 1.0, n)
    pts = np.stack([np.cos(theta), np.sin(theta), z], axis=1)
    caps = ~lateral
    if caps.any():
        disk = _uniform_disk(int(caps.sum()), rng)
        top = rng.random(int(caps.sum())) < 0.5
        pts[caps, 0:2] = disk
        pts[caps, 2] = np.where(top, 1.0, -1.0)
    return pts


def _cone(n: int, rng: np.random.Generator) -> np.ndarray:
    # apex at z=1, base radius 1 at z=-1; lateral area pi*sqrt(5), base pi
    p_lateral = math.sqrt(5.0) / (math.sqrt(5.0) + 1.0)
    lateral = rng.random(n) < p_lateral
    t = np.sqrt(rng.random(n))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    pts = np.stack([t * np.cos(theta), t * np.sin(theta), 1.0 - 2.0 * t], axis=1)
    base = ~lateral
    if base.any():
        pts[base, 0:2] = _uniform_disk(int(base.sum()), rng)
        pts[base, 2] = -1.0
    return pts


def _torus(n: int, rng: np.random.Generator) -> np.ndarray:
    # area density along the tube angle is proportional to R + r*cos(phi)
    phis: List[np.ndarray] = []
    have = 0
    while have < n:
        phi = rng.uniform(0.0, 2.0 * np.pi, 2 * n)
        keep = rng.random(2 * n) * (TORUS_MAJOR + TORUS_MINOR) <= TORUS_MAJOR + TORUS_MINOR * np.cos(phi)
        phis.append(phi[keep])
        have += int(keep.sum())
    phi = np.concatenate(phis)[:n]
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    ring = TORUS_MAJOR + TORUS_MINOR * np.cos(phi)
    return np.stack([ring * np.cos(theta), ring * np.sin(theta), TORUS_MINOR * np.sin(phi)], axis=1)


TETRAHEDRON = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
) / math.sqrt(3.0)
TETRA_FACES = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])


def _tetrahedron(n: int, rng: np.random.Generator) -> np.ndarray:
    faces = TETRA_FACES[rng.integers(0, 4, n)]
    return sample_triangles(TETRAHEDRON[faces[:, 0]], TETRAHEDRON[faces[:, 1]], TETRAHEDRON[faces[:, 2]], rng)


def _ellipsoid(n: int, rng: np.random.Generator) -> np.ndarray:
    a, b, c = ELLIPSOID_AXES
    g_max = max(a * b, a * c, b * c)
    chunks: List[np.ndarray] = []
    have = 0
    while have < n:
        u = _sphere(2 * n, rng)
        g = np.sqrt((b * c * u[:, 0]) ** 2 + (a * c * u[:, 1]) ** 2 + (a * b * u[:, 2]) ** 2)
        keep = rng.random(2 * n) * g_max <= g
        chunks.append(u[keep] * np.array([a, b, c]))
        have += int(keep.sum())
    return np.concatenate(chunks)[:n]


def _disk(n: int, rng: np.random.Generator) -> np.ndarray:
    xy = _uniform_disk(n, rng)
    return np.concatenate([xy, np.zeros((n, 1))], axis=1)


def sample_triangles(a: np.ndarray, b: np.ndarray, c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform point in each triangle (a[i], b[i], c[i])."""
    r1 = np.sqrt(rng.random((a.shape[0], 1)))
    r2 = rng.random((a.shape[0], 1))
    return (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c


_SAMPLERS: Dict[str, Callable[[int, np.random.Generator], np.ndarray]] = {
    "sphere": _antithetic(_sphere),
    "cube": _antithetic(_cube),
    "cylinder": _antithetic(_cylinder),
    "cone": _cone,
    "torus": _antithetic(_torus),
    "tetrahedron": _tetrahedron,
    "ellipsoid": _antithetic(_ellipsoid),
    "disk": _antithetic(_disk),
}


def sample_primitive(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    n points uniformly on the surface of a built-in primitive (before jitter,
    rotation and normalization).

    Raises:
        ConfigError: unknown primitive
    """
    sampler = _SAMPLERS.get(name)
    if sampler is None:
        raise ConfigError(f"unknown shape class '{name}', expected one of {', '.join(PRIMITIVES)}")
    return sampler(n, rng)


# ===== NORMALIZATION =====

def normalize_unit_sphere(points: np.ndarray) -> np.ndarray:
    """
    Subtract the centroid and scale so the largest norm is exactly 1.

    Raises:
        GeometryError: no points, or all points identical
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] != 3:
        raise GeometryError(f"expected a non-empty N x 3 cloud, got shape {pts.shape}")
    centered = pts - pts.mean(axis=0)
    radius = float(np.max(np.linalg.norm(centered, axis=1)))
    if radius == 0.0:
        raise GeometryError("cannot normalize a cloud whose points are all identical")
    return centered / radius


def rotate_z(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return points @ rot.T


# ===== GENERATION =====

def build_spec(**kwargs: Any) -> SyntheticSpec:
    """SyntheticSpec from keyword arguments; None values fall back to defaults."""
    values = {k: v for k, v in kwargs.items() if v is not None}
    try:
        spec = SyntheticSpec(**values)
    except ValidationError as exc:
        details = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"invalid dataset spec: {details}") from None
    return spec


def sample_rng(seed: int, split: str, class_index: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SPLIT_IDS[split], class_index, index])


def generate_cloud(shape: str, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Surface sample, Gaussian jitter, random z-rotation, unit-sphere normalization."""
    pts = sample_primitive(shape, spec.points_per_cloud, rng)
    pts = pts + spec.noise_sigma * rng.standard_normal(pts.shape)
    pts = rotate_z(pts, rng.uniform(0.0, 2.0 * np.pi))
    return normalize_unit_sphere(pts).astype(np.float32)


def generate_synthetic(spec: SyntheticSpec, seed: int, name: str = "synthetic") -> Dataset:
    """
    Build a dataset that is a pure function of (spec, seed).

    Raises:
        ConfigError: fewer than 2 classes, duplicate or unknown class names
    """
    if len(spec.classes) < 2:
        raise ConfigError(f"need at least 2 classes, got {len(spec.classes)}")
    if len(set(spec.classes)) != len(spec.classes):
        raise ConfigError(f"duplicate class names in {spec.classes}")
    for shape in spec.classes:
        if shape not in _SAMPLERS:
            raise ConfigError(f"unknown shape class '{shape}', expected one of {', '.join(PRIMITIVES)}")

    splits: Dict[str, Split] = {}
    for split, per_class in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        count = per_class * len(spec.classes)
        points = np.empty((count, spec.points_per_cloud, 3), dtype=np.float32)
        labels = np.empty(count, dtype=np.int64)
        row = 0
        for class_index, shape in enumerate(spec.classes):
            for i in range(per_class):
                points[row] = generate_cloud(shape, spec, sample_rng(seed, split, class_index, i))
                labels[row] = class_index
                row += 1
        splits[split] = Split(points=points, labels=labels)

    logger.info(
        "Synthetic dataset generated",
        classes=len(spec.classes),
        train=len(splits["train"]),
        test=len(splits["test"]),
        points=spec.points_per_cloud,
        seed=seed,
    )
    return Dataset(
        name=name,
        class_names=list(spec.classes),
        points_per_cloud=spec.points_per_cloud,
        seed=seed,
        train=splits["train"],
        test=splits["test"],
    )


# ===== BATCHING =====

def batch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    """Permutation used for epoch `epoch`: default_rng([shuffle_seed, epoch]).permutation(n)."""
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def batches(
    split: Split,
    batch_size: int,
    shuffle_seed: Optional[int] = 0,
    epoch: int = 0,
) -> Iterator[PointCloudBatch]:
    """
    Deterministic batches covering the split exactly once; the final short
    batch is kept. `shuffle_seed=None` keeps storage order (evaluation).

    Raises:
        ConfigError: empty split or batch_size < 1
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split)
    if n == 0:
        raise ConfigError("cannot batch an empty split")
    order = np.arange(n) if shuffle_seed is None else batch_order(n, shuffle_seed, epoch)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield PointCloudBatch(points=split.points[idx], labels=split.labels[idx])


def num_batches(split: Split, batch_size: int) -> int:
    return (len(split) + batch_size - 1) // batch_size
