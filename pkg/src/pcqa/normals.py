"""Surface normals by local plane fitting.

Each normal is the eigenvector of the smallest eigenvalue of the covariance
of a point and its ``k_n`` nearest neighbors.  Orientation is arbitrary: the
point-to-plane error squares the projection, so the sign cancels.
"""
from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit, prange
from .pointcloud import PointCloud
from .spatial import SpatialIndex

DEFAULT_K_N = 20


@njit(cache=True)
def eig3(a):
    """Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.

    Returns ``(w, v)`` with eigenvalues ascending and ``v[:, i]`` the unit
    eigenvector for ``w[i]``.  ``a`` is not modified.
    """
    m = a.copy()
    v = np.eye(3)
    for _ in range(64):
        off = m[0, 1] * m[0, 1] + m[0, 2] * m[0, 2] + m[1, 2] * m[1, 2]
        scale = m[0, 0] * m[0, 0] + m[1, 1] * m[1, 1] + m[2, 2] * m[2, 2]
        if off == 0.0 or off <= 1e-36 * scale:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = m[p, q]
                if apq == 0.0:
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for r in range(3):
                    mrp = m[r, p]
                    mrq = m[r, q]
                    m[r, p] = c * mrp - s * mrq
                    m[r, q] = s * mrp + c * mrq
                for r in range(3):
                    mpr = m[p, r]
                    mqr = m[q, r]
                    m[p, r] = c * mpr - s * mqr
                    m[q, r] = s * mpr + c * mqr
                m[p, q] = 0.0
                m[q, p] = 0.0
                for r in range(3):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
    w = np.array([m[0, 0], m[1, 1], m[2, 2]])
    order = np.argsort(w)
    wo = np.empty(3)
    vo = np.empty((3, 3))
    for i in range(3):
        wo[i] = w[order[i]]
        nrm = math.sqrt(v[0, order[i]] ** 2 + v[1, order[i]] ** 2 + v[2, order[i]] ** 2)
        for r in range(3):
            vo[r, i] = v[r, order[i]] / nrm
    return wo, vo


@njit(cache=True, parallel=True)
def _normals_kernel(pts, nbr):
    n = pts.shape[0]
    k = nbr.shape[1]
    out = np.empty((n, 3))
    degenerate = np.zeros(n, np.bool_)
    for i in prange(n):
        cnt = k + 1
        m0 = pts[i, 0]
        m1 = pts[i, 1]
        m2 = pts[i, 2]
        for j in range(k):
            p = nbr[i, j]
            m0 += pts[p, 0]
            m1 += pts[p, 1]
            m2 += pts[p, 2]
        m0 /= cnt
        m1 /= cnt
        m2 /= cnt
        cov = np.zeros((3, 3))
        d0 = pts[i, 0] - m0
        d1 = pts[i, 1] - m1
        d2 = pts[i, 2] - m2
        cov[0, 0] = d0 * d0
        cov[0, 1] = d0 * d1
        cov[0, 2] = d0 * d2
        cov[1, 1] = d1 * d1
        cov[1, 2] = d1 * d2
        cov[2, 2] = d2 * d2
        for j in range(k):
            p = nbr[i, j]
            d0 = pts[p, 0] - m0
            d1 = pts[p, 1] - m1
            d2 = pts[p, 2] - m2
            cov[0, 0] += d0 * d0
            cov[0, 1] += d0 * d1
            cov[0, 2] += d0 * d2
            cov[1, 1] += d1 * d1
            cov[1, 2] += d1 * d2
            cov[2, 2] += d2 * d2
        cov[1, 0] = cov[0, 1]
        cov[2, 0] = cov[0, 2]
        cov[2, 1] = cov[1, 2]
        if cov[0, 0] + cov[1, 1] + cov[2, 2] == 0.0:
            out[i, 0] = 0.0
            out[i, 1] = 0.0
            out[i, 2] = 1.0
            degenerate[i] = True
            continue
        _, vecs = eig3(cov)
        out[i, 0] = vecs[0, 0]
        out[i, 1] = vecs[1, 0]
        out[i, 2] = vecs[2, 0]
    return out, degenerate


def _normals_numpy(pts, nbr, chunk=65536):
    n, k = nbr.shape
    out = np.empty((n, 3))
    degenerate = np.zeros(n, bool)
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        hood = np.concatenate([pts[s:e, None, :], pts[nbr[s:e]]], axis=1)
        centered = hood - hood.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", centered, centered)
        deg = np.trace(cov, axis1=1, axis2=2) == 0.0
        _, vecs = np.linalg.eigh(cov)
        nrm = vecs[:, :, 0]
        nrm[deg] = (0.0, 0.0, 1.0)
        out[s:e] = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        degenerate[s:e] = deg
    return out, degenerate


def normals_from_neighbors(positions, neighbors):
    """Normals from a precomputed ``(N, k)`` neighbor index array (self excluded).

    Returns ``(normals, degenerate)``; degenerate neighborhoods (all points
    coincident) get ``(0, 0, 1)`` and a ``True`` flag.
    """
    pts = np.ascontiguousarray(positions, dtype=np.float64)
    nbr = np.ascontiguousarray(neighbors, dtype=np.int64)
    if _accel.use_numba():
        return _normals_kernel(pts, nbr)
    return _normals_numpy(pts, nbr)


def estimate_normals(cloud: PointCloud, index: SpatialIndex | None = None, k_n: int = DEFAULT_K_N,
                     return_flags: bool = False):
    """Return ``cloud`` with unit normals fitted over ``k_n`` nearest neighbors.

    With ``return_flags=True`` also returns the per-point degeneracy mask.
    """
    if k_n < 1:
        raise ValueError("k_n must be >= 1")
    if index is None:
        index = SpatialIndex(cloud.positions)
    nbr, _ = index.query_self(k_n)
    normals, degenerate = normals_from_neighbors(cloud.positions, nbr)
    out = cloud.replace(normals=normals)
    return (out, degenerate) if return_flags else out
