"""Point-set primitives: normalization, nearest neighbors, farthest point
sampling, Chamfer distance, and F-score.

The accelerated nearest-neighbor path is a kd-tree (scipy cKDTree,
leafsize 16); every operation here has a brute-force twin in the test
suite that it must match exactly. Tie rules are fixed: nearest-neighbor
and argmin ties resolve to the lowest index, FPS ties pick the lowest
candidate index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import tensor as T

KDTREE_LEAFSIZE = 16


@dataclass
class PointCloud:
    """N x 3 coordinates, normalized to fit inside [-0.5, 0.5]^3.

    ``source_center`` / ``source_scale`` record the de-normalization
    transform (bounding-box center and diagonal length of the original
    cloud); original = normalized * scale + center.
    """

    points: np.ndarray
    source_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    source_scale: float = 1.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"expected N x 3 points, got shape {self.points.shape}")
        if self.points.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.source_center = np.asarray(self.source_center, dtype=np.float64)

    def __len__(self):
        return self.points.shape[0]


def normalize_points(points, center=None, scale=None):
    """Map raw coordinates into [-0.5, 0.5]^3.

    Center is the bounding-box center and scale the bounding-box diagonal;
    passing both lets a partial cloud share its complete cloud's transform.
    """
    points = np.asarray(points, dtype=np.float64)
    if center is None or scale is None:
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        center = (lo + hi) / 2.0
        scale = float(np.linalg.norm(hi - lo))
        if scale == 0.0:
            scale = 1.0
    return PointCloud((points - center) / scale, source_center=center, source_scale=scale)


class SpatialIndex:
    """kd-tree over a fixed point set; exact nearest neighbors."""

    def __init__(self, points, leafsize=KDTREE_LEAFSIZE):
        self.points = np.asarray(points, dtype=np.float64)
        self._tree = cKDTree(self.points, leafsize=leafsize, balanced_tree=True)

    def query(self, queries, k=1):
        """k nearest neighbors per query, ascending distance. Returns
        (squared distances, indices), each of shape (len(queries), k)."""
        d, idx = self._tree.query(np.asarray(queries, dtype=np.float64), k=k)
        d = np.atleast_2d(d).reshape(len(queries), k)
        idx = np.atleast_2d(idx).reshape(len(queries), k)
        return d * d, idx


def _as_points(x):
    if isinstance(x, PointCloud):
        return x.points
    return np.asarray(x, dtype=np.float64)


def nearest_indices(queries, base):
    """Index into base of the nearest point per query (kd-tree path)."""
    queries = _as_points(queries)
    base = _as_points(base)
    if base.shape[0] == 0:
        raise ValueError("empty base set")
    _, idx = SpatialIndex(base).query(queries, k=1)
    return idx[:, 0]


def chamfer(x, y, return_indices=False):
    """Symmetric Chamfer distance: mean squared nearest-neighbor distance
    from x to y plus the same from y to x."""
    xp, yp = _as_points(x), _as_points(y)
    if xp.shape[0] == 0 or yp.shape[0] == 0:
        raise ValueError("chamfer requires non-empty point sets")
    ix = nearest_indices(xp, yp)
    iy = nearest_indices(yp, xp)
    l_xy = float(np.mean(np.sum((xp - yp[ix]) ** 2, axis=1)))
    l_yx = float(np.mean(np.sum((yp - xp[iy]) ** 2, axis=1)))
    cd = l_xy + l_yx
    if return_indices:
        return cd, ix, iy
    return cd


def chamfer_t(x, y):
    """Differentiable Chamfer distance between two N x 3 tensors.

    The argmin assignments are found with the kd-tree on the raw buffers;
    the loss is then assembled from differentiable ops so gradients flow
    into both coordinate sets through the recorded assignments.
    """
    ix = nearest_indices(x.data, y.data)
    iy = nearest_indices(y.data, x.data)
    dx = T.sub(x, T.gather_rows(y, ix))
    dy = T.sub(y, T.gather_rows(x, iy))
    l_xy = T.reduce_mean(T.reduce_sum(T.mul(dx, dx), axis=1))
    l_yx = T.reduce_mean(T.reduce_sum(T.mul(dy, dy), axis=1))
    return T.add(l_xy, l_yx)


def fps(points, m, start=0):
    """Greedy farthest point sampling: repeatedly pick the point with the
    largest distance to the already-chosen set; ties -> lowest index."""
    pts = _as_points(points)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} points from {n}")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range")
    selected = np.empty(m, dtype=np.intp)
    selected[0] = start
    dist = np.sum((pts - pts[start]) ** 2, axis=1)
    # already-selected indices are excluded outright, so duplicated
    # coordinates still yield m distinct indices
    dist[start] = -np.inf
    for i in range(1, m):
        nxt = int(np.argmax(dist))  # argmax returns the lowest tied index
        selected[i] = nxt
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
        dist[nxt] = -np.inf
    return selected


def knn(queries, base, k):
    """k nearest base indices per query, ascending distance, ties by
    lowest index. Brute-force path for small sets, kd-tree otherwise."""
    qp, bp = _as_points(queries), _as_points(base)
    if k > bp.shape[0]:
        raise ValueError(f"k={k} exceeds base size {bp.shape[0]}")
    if k < 1:
        raise ValueError("k must be >= 1")
    return _knn_direct(qp, bp, k)


def knn_features(queries, base, k):
    """knn in arbitrary-dimensional feature space (same tie rules).

    Uses the expanded dot-product form of the squared distance, which is
    cheap in high dimensions, deterministic, and permutation-equivariant;
    exact per-pair agreement with the naive oracle is only guaranteed for
    the 3-D :func:`knn`."""
    qp = np.asarray(queries, dtype=np.float64)
    bp = np.asarray(base, dtype=np.float64)
    if k > bp.shape[0]:
        raise ValueError(f"k={k} exceeds base size {bp.shape[0]}")
    d2 = np.sum(qp * qp, axis=1)[:, None] + np.sum(bp * bp, axis=1)[None, :] - 2.0 * (qp @ bp.T)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def _knn_direct(qp, bp, k, chunk=256):
    """Exact squared distances per pair (no expanded dot-product form, so
    the result matches a naive per-pair oracle bit for bit); stable argsort
    gives the declared lowest-index tie order."""
    out = np.empty((qp.shape[0], k), dtype=np.intp)
    for s in range(0, qp.shape[0], chunk):
        q = qp[s:s + chunk]
        d2 = np.sum((q[:, None, :] - bp[None, :, :]) ** 2, axis=2)
        out[s:s + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def fscore(x, y, tau):
    """Precision / recall / F at unsquared distance threshold tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    xp, yp = _as_points(x), _as_points(y)
    if xp.shape[0] == 0 or yp.shape[0] == 0:
        raise ValueError("fscore requires non-empty point sets")
    dx, _ = SpatialIndex(yp).query(xp, k=1)
    dy, _ = SpatialIndex(xp).query(yp, k=1)
    precision = float(np.mean(np.sqrt(dx[:, 0]) <= tau))
    recall = float(np.mean(np.sqrt(dy[:, 0]) <= tau))
    if precision + recall == 0.0:
        return 0.0, 0.0, 0.0
    f = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f
