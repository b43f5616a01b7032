"""Exact k-nearest-neighbour distances and k-NN density estimates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln

from .errors import DimensionMismatch, KTooLarge, ZeroDistance

BRUTE_FORCE_LIMIT = 2000
_CHUNK = 2048


def ball_volume_constant(d: int) -> float:
    """Volume of the unit ball in R^d."""
    return float(np.exp(0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1.0)))


def default_k(N: int) -> int:
    """Nearest integer to sqrt(N - 1), at least 1."""
    return max(1, int(np.floor(np.sqrt(N - 1) + 0.5)))


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionMismatch("points must be an (n, d) array")
    return x


class NeighborIndex:
    """Immutable exact Euclidean neighbour index over a point set.

    Small sets are scanned by brute force; sets of :data:`BRUTE_FORCE_LIMIT`
    points or more go through a k-d tree.  Both paths return exact distances.
    """

    def __init__(self, points, brute_force=None):
        self.points = _points(points).copy()
        self.points.setflags(write=False)
        if brute_force is None:
            brute_force = len(self.points) < BRUTE_FORCE_LIMIT
        self.brute_force = brute_force
        self._tree = None if brute_force else cKDTree(self.points)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def kth_distances(self, queries, k: int, exclude_self: bool = False) -> np.ndarray:
        """Distance from each query to its k-th nearest indexed point.

        With ``exclude_self`` the queries must be the indexed points themselves
        (same order); each query then skips exactly one copy of itself.
        """
        q = _points(queries)
        if q.shape[1] != self.dim:
            raise DimensionMismatch(f"query dimension {q.shape[1]}, index dimension {self.dim}")
        k = int(k)
        available = self.size - 1 if exclude_self else self.size
        if k < 1 or k > available:
            raise KTooLarge(f"k={k} but only {available} neighbours are available")
        kk = k + 1 if exclude_self else k
        if self.brute_force:
            return _brute_kth(q, self.points, kk)
        dist, _ = self._tree.query(q, k=[kk])
        return dist[:, 0]


def _brute_kth(q: np.ndarray, pts: np.ndarray, kk: int) -> np.ndarray:
    out = np.empty(q.shape[0])
    for a in range(0, q.shape[0], _CHUNK):
        diff = q[a:a + _CHUNK, None, :] - pts[None, :, :]
        # accumulate coordinate by coordinate, the same order the k-d tree uses
        sq = diff[..., 0] ** 2
        for j in range(1, q.shape[1]):
            sq = sq + diff[..., j] ** 2
        out[a:a + _CHUNK] = np.sqrt(np.partition(sq, kk - 1, axis=1)[:, kk - 1])
    return out


def kth_nn_distance(query, index: NeighborIndex, k: int, exclude_self: bool = False) -> float:
    """Distance from a single query point to its k-th nearest neighbour in ``index``.

    For ``exclude_self`` the query is assumed to be one of the indexed points
    and one zero-distance match is skipped.
    """
    q = np.atleast_1d(np.asarray(query, dtype=float)).reshape(1, -1)
    return float(index.kth_distances(q, k, exclude_self)[0])


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    k: int
    sample_size: int
    distance: float


def density_at(query, index: NeighborIndex, k: int, mode: str = "cross-sample") -> DensityEstimate:
    """k-NN density estimate at ``query``.

    ``within-sample``: the query belongs to the indexed sample (size N) and is
    excluded, giving k / ((N - 1) c rho^d).  ``cross-sample``: the index is an
    independent sample of size M, giving k / (M c gamma^d).
    """
    if mode not in ("within-sample", "cross-sample"):
        raise ValueError(f"unknown mode {mode!r}")
    within = mode == "within-sample"
    dist = kth_nn_distance(query, index, k, exclude_self=within)
    if dist == 0.0:
        raise ZeroDistance("k-th neighbour distance is zero (duplicate points)")
    count = index.size - 1 if within else index.size
    d = index.dim
    value = k / (count * ball_volume_constant(d) * dist ** d)
    return DensityEstimate(value, k, count, dist)


def jitter(points: np.ndarray, rng: np.random.Generator, rel: float = 1e-12) -> np.ndarray:
    """Break exact ties by a uniform perturbation of size ``rel`` times the sample diameter.

    The diameter is approximated by the bounding-box diagonal.  A sample with
    zero diameter (all points equal) falls back to ``rel * max(1, |x|_inf)``.
    """
    pts = _points(points)
    diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diam == 0.0:
        diam = max(1.0, float(np.abs(pts).max()))
    return pts + rel * diam * rng.uniform(-1.0, 1.0, size=pts.shape)
