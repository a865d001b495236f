"""
Sampling and grouping for set abstraction: farthest point sampling and
ball query. Pure numpy, no gradients (coordinates are inputs, not
parameters).
"""

import numpy as np

from t3dnet.core.errors import ContractError, DimensionError


def _check_points(points: np.ndarray, name: str = "points") -> np.ndarray:
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] != 3:
        raise DimensionError(f"{name} must be N x 3, got shape {points.shape}")
    return points


def farthest_point_sampling(points: np.ndarray, m: int, start_index: int = 0) -> np.ndarray:
    """
    Greedy FPS: each pick maximizes the minimum distance to the previous picks.

    Ties go to the lowest index.

    Args:
        points: (N, 3)
        m: Number of picks, 1 <= m <= N
        start_index: First pick

    Returns:
        (m,) int64 indices in pick order
    """
    points = _check_points(points)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ContractError(f"farthest_point_sampling: m={m} must lie in [1, {n}]")
    if not 0 <= start_index < n:
        raise ContractError(f"farthest_point_sampling: start_index {start_index} out of range")

    pts = points.astype(np.float64, copy=False)
    picks = np.empty(m, dtype=np.int64)
    picks[0] = start_index
    min_dist = np.sum((pts - pts[start_index]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(min_dist))
        picks[i] = nxt
        np.minimum(min_dist, np.sum((pts - pts[nxt]) ** 2, axis=1), out=min_dist)
    return picks


def ball_query(points: np.ndarray, centroids: np.ndarray, radius: float, k: int) -> np.ndarray:
    """
    Up to k neighbours within `radius` of each centroid, ascending index order.

    Short lists are padded by repeating the first neighbour found; a centroid
    with an empty ball gets k copies of its nearest point.

    Returns:
        (M, k) int64
    """
    points = _check_points(points)
    centroids = _check_points(centroids, "centroids")
    if points.shape[0] == 0:
        raise ContractError("ball_query on an empty point set")
    if radius <= 0:
        raise ContractError(f"ball_query radius must be positive, got {radius}")
    if k < 1:
        raise ContractError(f"ball_query k must be >= 1, got {k}")

    n = points.shape[0]
    diff = centroids[:, None, :].astype(np.float64) - points[None, :, :].astype(np.float64)
    dist2 = np.sum(diff * diff, axis=-1)  # (M, N)
    inside = dist2 <= radius * radius

    # first k inside indices per row, in ascending order
    keyed = np.where(inside, np.arange(n)[None, :], n)
    keyed.sort(axis=1)
    width = min(k, n)
    idx = keyed[:, :width]
    counts = inside.sum(axis=1)

    if width < k:
        idx = np.concatenate([idx, np.full((idx.shape[0], k - width), n)], axis=1)
    first = idx[:, :1]
    nearest = np.argmin(dist2, axis=1)[:, None]
    first = np.where(counts[:, None] > 0, first, nearest)
    slot = np.arange(k)[None, :]
    idx = np.where(slot < np.minimum(counts, k)[:, None], idx, first)
    return idx.astype(np.int64)


def batched_fps(xyz: np.ndarray, npoint: int, start_index: int = 0) -> np.ndarray:
    """FPS per cloud of a (B, N, 3) batch -> (B, npoint)."""
    return np.stack([farthest_point_sampling(cloud, npoint, start_index) for cloud in xyz])


def batched_ball_query(xyz: np.ndarray, centroids: np.ndarray, radius: float, k: int) -> np.ndarray:
    """Ball query per cloud: xyz (B, N, 3), centroids (B, M, 3) -> (B, M, k)."""
    return np.stack([ball_query(xyz[b], centroids[b], radius, k) for b in range(xyz.shape[0])])
