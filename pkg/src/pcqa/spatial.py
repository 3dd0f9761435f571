"""Nearest-neighbor search over point coordinates.

Every query ranks candidates by ``(squared distance, point index)``: equal
distances are resolved in favor of the smaller original index.  The numba
backend walks a median-split KD-tree (:mod:`pcqa._kdtree`); the numpy backend
uses :class:`scipy.spatial.cKDTree` for candidate generation and re-ranks
candidates with exactly recomputed squared distances so both backends return
identical neighbor lists.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from . import _accel
from ._kdtree import LEAF_SIZE, build_tree, knn_query, knn_self_query
from .pointcloud import PointCloud


def squared_distances(a, b):
    """Row-wise squared distance, evaluated in the canonical ``(dx²+dy²)+dz²`` order."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return (d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]) + d[..., 2] * d[..., 2]


@dataclass(frozen=True)
class NeighborList:
    """Neighbors of one query, ascending by ``(distance, index)``.

    ``query`` is the query's point index, or -1 for an external coordinate.
    """

    query: int
    indices: np.ndarray
    sq_distances: np.ndarray

    def __len__(self):
        return len(self.indices)


class SpatialIndex:
    """Immutable KD-tree over the positions of one cloud."""

    def __init__(self, positions, leaf_size: int = LEAF_SIZE):
        pts = np.array(positions, dtype=np.float64, order="C", copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"positions must be (N>=1, 3), got {pts.shape}")
        pts.flags.writeable = False
        self.points = pts
        self.backend = _accel.backend()
        if self.backend == "numba":
            self._tree = build_tree(pts, int(leaf_size))
        else:
            self._tree = cKDTree(pts, leafsize=int(leaf_size), balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return self.points.shape[0]

    # batch API -----------------------------------------------------------

    def query(self, queries, k: int, self_ids=None):
        """k nearest indexed points for each row of ``queries``.

        ``self_ids`` (optional, one index per query, -1 for none) names an
        indexed point to leave out of that query's result.  Returns
        ``(indices, sq_distances)`` of shape ``(M, k_eff)`` where ``k_eff``
        shrinks to the number of available candidates.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        m = q.shape[0]
        n = len(self)
        if self_ids is None:
            sid = np.full(m, -1, np.int64)
            k_eff = min(k, n)
        else:
            sid = np.ascontiguousarray(self_ids, dtype=np.int64).reshape(m)
            k_eff = min(k, n - 1) if np.any(sid >= 0) else min(k, n)
        if k_eff <= 0:
            return np.empty((m, 0), np.int64), np.empty((m, 0), np.float64)
        if self.backend == "numba":
            idx, d2 = knn_query(*self._tree, q, k_eff, sid)
        else:
            idx, d2 = self._query_scipy(q, k_eff, sid)
        return idx, d2

    def query_self(self, k: int):
        """KNN graph of the indexed cloud with each point excluded from its own list."""
        if k < 1:
            raise ValueError("k must be >= 1")
        n = len(self)
        k_eff = min(k, n - 1)
        if k_eff <= 0:
            return np.empty((n, 0), np.int64), np.empty((n, 0), np.float64)
        if self.backend == "numba":
            return knn_self_query(*self._tree, k_eff)
        return self._query_scipy(self.points, k_eff, np.arange(n, dtype=np.int64))

    def nearest_batch(self, queries):
        """Nearest indexed point (tie: smallest index) for each query row."""
        idx, d2 = self.query(queries, 1)
        return idx[:, 0].copy(), d2[:, 0].copy()

    # single-query API ----------------------------------------------------

    def nearest(self, point):
        idx, d2 = self.nearest_batch(np.asarray(point, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(d2[0])

    def knn(self, query: Union[int, np.integer, np.ndarray, list, tuple], k: int,
            exclude_self: bool = True) -> NeighborList:
        """Neighbors of an indexed point (by index) or of an external coordinate."""
        if isinstance(query, (int, np.integer)):
            qi = int(query)
            if not 0 <= qi < len(self):
                raise IndexError(f"point index {qi} out of range")
            sid = np.array([qi if exclude_self else -1], np.int64)
            idx, d2 = self.query(self.points[qi:qi + 1], k, sid if exclude_self else None)
            return NeighborList(qi, idx[0], d2[0])
        idx, d2 = self.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
        return NeighborList(-1, idx[0], d2[0])

    # scipy candidate generation + exact re-ranking ------------------------

    def _query_scipy(self, q, k, sid):
        n = len(self)
        m = q.shape[0]
        pts = self.points
        extra = 1 if np.any(sid >= 0) else 0
        kq = min(n, k + extra + 2)
        _, cand = self._tree.query(q, k=kq)
        cand = np.asarray(cand, dtype=np.int64).reshape(m, kq)
        d2 = squared_distances(pts[cand], q[:, None, :])
        d2 = np.where(cand == sid[:, None], np.inf, d2)
        order = _rank(d2, cand)
        cand = np.take_along_axis(cand, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)
        out_i = cand[:, :k].copy()
        out_d = d2[:, :k].copy()
        if kq < n:
            # a candidate list is trustworthy only if it extends strictly past the
            # k-th distance by more than the scipy rounding slack
            last = d2[:, -1]
            if extra:
                last = np.where(np.isinf(last), d2[:, -2], last)
            kth = out_d[:, -1]
            suspect = np.flatnonzero(~(last > kth * (1.0 + 1e-9) + 1e-300))
            for r in suspect:
                radius = np.sqrt(kth[r]) * (1.0 + 1e-6) + 1e-12
                ball = np.asarray(self._tree.query_ball_point(q[r], radius), dtype=np.int64)
                ball = ball[ball != sid[r]]
                bd = squared_distances(pts[ball], q[r])
                o = np.lexsort((ball, bd))[:k]
                out_i[r] = ball[o]
                out_d[r] = bd[o]
        return out_i, out_d


def _rank(d2, idx):
    """Per-row argsort by (d2, idx)."""
    order = np.argsort(idx, axis=1, kind="stable")
    d_sorted = np.take_along_axis(d2, order, axis=1)
    order2 = np.argsort(d_sorted, axis=1, kind="stable")
    return np.take_along_axis(order, order2, axis=1)


def build_index(cloud_or_positions: Union[PointCloud, np.ndarray]) -> SpatialIndex:
    pos = cloud_or_positions.positions if isinstance(cloud_or_positions, PointCloud) else cloud_or_positions
    return SpatialIndex(pos)


def nearest(index: SpatialIndex, query) -> tuple[int, float]:
    """(point index, squared distance) of the indexed point closest to ``query``."""
    return index.nearest(query)


def knn(index: SpatialIndex, query, k: int, exclude_self: bool = True) -> NeighborList:
    return index.knn(query, k, exclude_self)


def sample_correspondence(ref: PointCloud, dist_index: SpatialIndex, dist: PointCloud,
                          nearest_ids: Optional[np.ndarray] = None) -> PointCloud:
    """Distorted cloud resampled onto the reference ordering.

    Point i of the result is the distorted point nearest to reference point i,
    so the output has ``len(ref)`` points and may repeat distorted points.
    ``nearest_ids`` lets callers pass an already computed correspondence.
    """
    if nearest_ids is None:
        nearest_ids, _ = dist_index.nearest_batch(ref.positions)
    return dist.take(nearest_ids)
