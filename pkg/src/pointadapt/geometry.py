"""Deterministic geometric kernels: set distances, sampling, neighborhoods.

Point clouds are plain ``(n, 3)`` float arrays. All tie-breaks resolve to
the lowest index and all sampling is seeded, so every function here is
exactly reproducible.

Metric conventions (stated once, relied on everywhere):

* Chamfer distance (CD): squared L2 nearest-neighbor distances, averaged
  per point within each direction, directions summed. Reported scaled by
  1e4.
* Unidirectional Chamfer (UCD): the partial->prediction direction of the
  same squared/mean convention. Scaled by 1e4.
* Unidirectional Hausdorff (UHD): max over partial points of the plain
  (non-squared) nearest-neighbor L2 distance to the prediction. Scaled
  by 1e2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from pointadapt.errors import InvalidInputError

CD_SCALE = 1e4
UCD_SCALE = 1e4
UHD_SCALE = 1e2


@dataclass(frozen=True)
class MetricValue:
    """A nonnegative distance with its conventional reporting scale."""

    raw: float
    scale: float

    @property
    def scaled(self):
        return self.raw * self.scale


def as_cloud(points, name="cloud"):
    """Validate and return an (n, 3) float64 point cloud."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise InvalidInputError(f"{name} must contain at least one point")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return arr


def _sq_dists(a, b):
    return cdist(a, b, "sqeuclidean")


def chamfer_distance(a, b):
    """Symmetric squared Chamfer distance between two clouds."""
    a = as_cloud(a, "a")
    b = as_cloud(b, "b")
    d = _sq_dists(a, b)
    raw = d.min(axis=1).mean() + d.min(axis=0).mean()
    return MetricValue(float(raw), CD_SCALE)


def unidirectional_chamfer(partial, pred):
    """Mean squared nearest-neighbor distance, partial -> pred only."""
    partial = as_cloud(partial, "partial")
    pred = as_cloud(pred, "pred")
    raw = _sq_dists(partial, pred).min(axis=1).mean()
    return MetricValue(float(raw), UCD_SCALE)


def unidirectional_hausdorff(partial, pred):
    """Max over partial points of the plain nearest-neighbor distance."""
    partial = as_cloud(partial, "partial")
    pred = as_cloud(pred, "pred")
    raw = np.sqrt(_sq_dists(partial, pred).min(axis=1)).max()
    return MetricValue(float(raw), UHD_SCALE)


def farthest_point_sample(cloud, k, seed_index):
    """Greedy max-min subset selection of ``k`` distinct indices.

    Each next index maximizes the minimum distance to the already
    selected set; ties resolve to the lowest index. Deterministic given
    ``seed_index``.
    """
    cloud = as_cloud(cloud)
    n = cloud.shape[0]
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must be in [1, {n}], got {k}")
    if not 0 <= seed_index < n:
        raise InvalidInputError(f"seed_index {seed_index} out of range [0, {n})")
    selected = np.empty(k, dtype=np.int64)
    selected[0] = seed_index
    min_sq = ((cloud - cloud[seed_index]) ** 2).sum(axis=1)
    min_sq[seed_index] = -1.0
    for i in range(1, k):
        nxt = int(np.argmax(min_sq))
        selected[i] = nxt
        min_sq = np.minimum(min_sq, ((cloud - cloud[nxt]) ** 2).sum(axis=1))
        min_sq[nxt] = -1.0
    return selected


def knn_indices(cloud, query, k):
    """Indices of the k nearest cloud points per query point.

    Sorted ascending by distance, ties by lowest index. Shape (m, k).
    """
    cloud = as_cloud(cloud)
    query = as_cloud(query, "query")
    if not 1 <= k <= cloud.shape[0]:
        raise InvalidInputError(f"k must be in [1, {cloud.shape[0]}], got {k}")
    d = _sq_dists(query, cloud)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def lexicographic_min_index(cloud):
    """Index of the lexicographically smallest (x, y, z) point."""
    cloud = as_cloud(cloud)
    return int(np.lexsort((cloud[:, 2], cloud[:, 1], cloud[:, 0]))[0])


def resample(cloud, n, seed=0):
    """Return exactly ``n`` points from ``cloud``.

    Downsampling uses farthest-point sampling seeded at the
    lexicographically smallest point; a deficit is filled by uniform
    duplication with replacement. Deterministic under a fixed seed.
    """
    cloud = as_cloud(cloud)
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    size = cloud.shape[0]
    if n == size:
        return cloud.copy()
    if n < size:
        idx = farthest_point_sample(cloud, n, lexicographic_min_index(cloud))
        return cloud[idx]
    rng = np.random.default_rng(seed)
    extra = rng.integers(0, size, size=n - size)
    return np.concatenate([cloud, cloud[extra]], axis=0)


def normalize_unit_sphere(cloud):
    """Center at the centroid and scale so the farthest point has norm 1."""
    cloud = as_cloud(cloud)
    centered = cloud - cloud.mean(axis=0)
    radius = np.sqrt((centered**2).sum(axis=1).max())
    if radius == 0.0:
        raise InvalidInputError("cannot normalize a degenerate (single-site) cloud")
    return centered / radius
