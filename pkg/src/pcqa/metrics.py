"""The five full-reference scores and the pipeline that computes them together.

All raw errors are reduced with ``np.sum`` (pairwise summation) over per-point
terms, so results do not depend on the kernel backend or thread count.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from ._accel import njit, prange
from .normals import normals_from_neighbors
from .pointcloud import PointCloud, compute_lightness
from .spatial import SpatialIndex

log = logging.getLogger(__name__)

SCORE_NAMES = ("s1", "s2", "s3", "s4", "s5")


@dataclass(frozen=True)
class MetricConfig:
    k3: int = 20
    k4: int = 5
    k_n: int = 20
    sampling: bool = True
    epsilon_std: float = 1e-9

    def __post_init__(self):
        for name in ("k3", "k4", "k_n"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epsilon_std < 0:
            raise ValueError("epsilon_std must be >= 0")


@dataclass
class FeatureVector:
    s1: float
    s2: float
    s3: float
    s4: float
    s5: float
    e_p2point: float
    e_p2plane: float
    e_bvar: float
    e_gvar: float
    timings: dict = field(default_factory=dict, compare=False)

    def scores(self) -> tuple:
        return (self.s1, self.s2, self.s3, self.s4, self.s5)

    def as_array(self) -> np.ndarray:
        return np.array(self.scores(), dtype=np.float64)


def _score(err: float) -> float:
    return 1.0 / (1.0 + err)


def _mean(terms) -> float:
    terms = np.asarray(terms, dtype=np.float64)
    return float(np.sum(terms) / terms.shape[0])


# per-point kernels -------------------------------------------------------


@njit(cache=True, parallel=True)
def _local_std_kernel(values, nbr):
    n, k = nbr.shape
    out = np.zeros(n)
    if k == 0:
        return out
    for i in prange(n):
        mu = 0.0
        for j in range(k):
            mu += values[nbr[i, j]]
        mu /= k
        acc = 0.0
        for j in range(k):
            d = values[nbr[i, j]] - mu
            acc += d * d
        out[i] = math.sqrt(acc / k)
    return out


def _local_std_numpy(values, nbr):
    n, k = nbr.shape
    if k == 0:
        return np.zeros(n)
    # column-sequential accumulation mirrors the kernel's summation order
    mu = np.zeros(n)
    for j in range(k):
        mu += values[nbr[:, j]]
    mu /= k
    acc = np.zeros(n)
    for j in range(k):
        d = values[nbr[:, j]] - mu
        acc += d * d
    return np.sqrt(acc / k)


def local_std(values, neighbors) -> np.ndarray:
    """Population std of ``values`` over each row of a neighbor index array."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    nbr = np.ascontiguousarray(neighbors, dtype=np.int64)
    if _accel.use_numba():
        return _local_std_kernel(v, nbr)
    return _local_std_numpy(v, nbr)


@njit(cache=True, parallel=True)
def _total_variation_kernel(values, nbr):
    n, k = nbr.shape
    out = np.zeros(n)
    for i in prange(n):
        acc = 0.0
        li = values[i]
        for j in range(k):
            acc += abs(li - values[nbr[i, j]])
        out[i] = acc
    return out


def _total_variation_numpy(values, nbr):
    n, k = nbr.shape
    acc = np.zeros(n)
    for j in range(k):
        acc += np.abs(values - values[nbr[:, j]])
    return acc


def total_variation(values, neighbors) -> np.ndarray:
    """Per-point sum of absolute differences to its graph neighbors."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    nbr = np.ascontiguousarray(neighbors, dtype=np.int64)
    if _accel.use_numba():
        return _total_variation_kernel(v, nbr)
    return _total_variation_numpy(v, nbr)


# scores from precomputed neighborhoods -------------------------------------


def p2point_error(ref_to_dist_d2, dist_to_ref_d2):
    """(E, E^R, E^D) from the nearest-neighbor squared distances in each direction."""
    e_r = _mean(ref_to_dist_d2)
    e_d = _mean(dist_to_ref_d2)
    return (e_r + e_d) / 2.0, e_r, e_d


def p2plane_terms(dist_positions, ref_positions, ref_normals, nearest_ref):
    """Per distorted point: squared projection of its error vector on the matched reference normal."""
    err = np.asarray(dist_positions, np.float64) - ref_positions[nearest_ref]
    n = ref_normals[nearest_ref]
    proj = (err[:, 0] * n[:, 0] + err[:, 1] * n[:, 1]) + err[:, 2] * n[:, 2]
    return proj * proj


def lightness_variance_error(sigma_ref, sigma_dist):
    d = np.asarray(sigma_ref) - np.asarray(sigma_dist)
    return _mean(d * d)


def graph_variation_error(v_ref, v_dist, epsilon_std=1e-9):
    """Relative change of the spread of per-point total variation.

    A flat reference (std below ``epsilon_std``) yields 0 when the distorted
    signal is flat too and 1 otherwise.
    """
    std_r = float(np.std(v_ref))
    std_d = float(np.std(v_dist))
    if std_r <= epsilon_std:
        return 0.0 if std_d <= epsilon_std else 1.0
    return abs(std_r - std_d) / std_r


# public single-score operations ----------------------------------------


def _with_lightness(cloud):
    return cloud if cloud.lightness is not None else compute_lightness(cloud)


def score_p2point(ref: PointCloud, dist: PointCloud, ref_index: Optional[SpatialIndex] = None,
                  dist_index: Optional[SpatialIndex] = None):
    """Symmetric point-to-point error and its score: ``(E_p2point, S1)``."""
    ref_index = SpatialIndex(ref.positions) if ref_index is None else ref_index
    dist_index = SpatialIndex(dist.positions) if dist_index is None else dist_index
    _, d_rd = dist_index.nearest_batch(ref.positions)
    _, d_dr = ref_index.nearest_batch(dist.positions)
    e, _, _ = p2point_error(d_rd, d_dr)
    return e, _score(e)


def score_p2plane(ref: PointCloud, dist: PointCloud, ref_index: Optional[SpatialIndex] = None):
    """Distorted-to-reference point-to-plane error and score: ``(E_p2plane, S2)``."""
    if ref.normals is None:
        raise ValueError("reference cloud has no normals; run estimate_normals first")
    ref_index = SpatialIndex(ref.positions) if ref_index is None else ref_index
    nn, _ = ref_index.nearest_batch(dist.positions)
    e = _mean(p2plane_terms(dist.positions, ref.positions, ref.normals, nn))
    return e, _score(e)


def score_lightness_variance(ref: PointCloud, sampled_dist: PointCloud,
                             ref_index: Optional[SpatialIndex] = None,
                             sampled_index: Optional[SpatialIndex] = None, k3: int = 20):
    """Local lightness spread difference: ``(E_bvar, S3)``.

    ``sampled_dist`` must be aligned point-for-point with ``ref`` (see
    :func:`pcqa.spatial.sample_correspondence`).
    """
    ref = _with_lightness(ref)
    sampled_dist = _with_lightness(sampled_dist)
    if len(sampled_dist) != len(ref):
        raise ValueError("sampled distorted cloud must have one point per reference point")
    ref_index = SpatialIndex(ref.positions) if ref_index is None else ref_index
    sampled_index = SpatialIndex(sampled_dist.positions) if sampled_index is None else sampled_index
    nbr_r, _ = ref_index.query_self(k3)
    nbr_d, _ = sampled_index.query_self(k3)
    e = lightness_variance_error(local_std(ref.lightness, nbr_r), local_std(sampled_dist.lightness, nbr_d))
    return e, _score(e)


def score_graph_variation(ref: PointCloud, sampled_dist: PointCloud,
                          ref_index: Optional[SpatialIndex] = None,
                          sampled_index: Optional[SpatialIndex] = None, k4: int = 5,
                          epsilon_std: float = 1e-9):
    """Graph total-variation spread difference: ``(E_gvar, S4)``."""
    ref = _with_lightness(ref)
    sampled_dist = _with_lightness(sampled_dist)
    ref_index = SpatialIndex(ref.positions) if ref_index is None else ref_index
    sampled_index = SpatialIndex(sampled_dist.positions) if sampled_index is None else sampled_index
    nbr_r, _ = ref_index.query_self(k4)
    nbr_d, _ = sampled_index.query_self(k4)
    e = graph_variation_error(total_variation(ref.lightness, nbr_r),
                              total_variation(sampled_dist.lightness, nbr_d), epsilon_std)
    return e, _score(e)


def score_point_count(n_dist: int, n_ref: int) -> float:
    if n_ref < 1:
        raise ValueError("reference point count must be >= 1")
    if n_dist < 0:
        raise ValueError("distorted point count must be >= 0")
    return min(1.0, n_dist / n_ref)


# pipeline ------------------------------------------------------------


class _Timer:
    def __init__(self):
        self.timings = {}
        self._t = time.perf_counter()

    def lap(self, name):
        now = time.perf_counter()
        self.timings[name] = self.timings.get(name, 0.0) + (now - self._t)
        self._t = now


def compute_features(ref: PointCloud, dist: PointCloud, config: Optional[MetricConfig] = None) -> FeatureVector:
    """All five scores for one (reference, distorted) pair.

    Both spatial indexes are built once; the reference KNN graph is built once
    at the largest neighborhood size and sliced for normals, S3 and S4; the
    nearest-neighbor correspondences in each direction feed S1, S2 and the
    resampling of the distorted cloud.

    With sampling disabled the distorted neighborhoods are taken in the full
    distorted cloud; S3 then pairs each reference point with the spread at
    its nearest distorted point.
    """
    cfg = config or MetricConfig()
    timer = _Timer()

    ref = _with_lightness(ref)
    dist = _with_lightness(dist)
    timer.lap("lightness")

    ref_index = SpatialIndex(ref.positions)
    dist_index = SpatialIndex(dist.positions)
    k_ref = max(cfg.k3, cfg.k4, cfg.k_n)
    nbr_ref, _ = ref_index.query_self(k_ref)
    nn_rd, d_rd = dist_index.nearest_batch(ref.positions)
    nn_dr, d_dr = ref_index.nearest_batch(dist.positions)
    timer.lap("graph")

    normals, degenerate = normals_from_neighbors(ref.positions, nbr_ref[:, :cfg.k_n])
    if degenerate.any():
        log.debug("%d degenerate normal neighborhoods", int(degenerate.sum()))
    timer.lap("normals")

    e_p2point, _, _ = p2point_error(d_rd, d_dr)
    timer.lap("s1")
    e_p2plane = _mean(p2plane_terms(dist.positions, ref.positions, normals, nn_dr))
    timer.lap("s2")

    k_dist = max(cfg.k3, cfg.k4)
    if cfg.sampling:
        sampled = dist.take(nn_rd)
        nbr_d, _ = SpatialIndex(sampled.positions).query_self(k_dist)
        light_d = sampled.lightness
    else:
        nbr_d, _ = dist_index.query_self(k_dist)
        light_d = dist.lightness
    timer.lap("graph")

    sigma_r = local_std(ref.lightness, nbr_ref[:, :cfg.k3])
    sigma_d = local_std(light_d, nbr_d[:, :cfg.k3])
    if not cfg.sampling:
        sigma_d = sigma_d[nn_rd]
    e_bvar = lightness_variance_error(sigma_r, sigma_d)
    timer.lap("s3")

    v_r = total_variation(ref.lightness, nbr_ref[:, :cfg.k4])
    v_d = total_variation(light_d, nbr_d[:, :cfg.k4])
    e_gvar = graph_variation_error(v_r, v_d, cfg.epsilon_std)
    timer.lap("s4")

    s5 = score_point_count(len(dist), len(ref))
    timer.lap("s5")

    return FeatureVector(
        s1=_score(e_p2point), s2=_score(e_p2plane), s3=_score(e_bvar), s4=_score(e_gvar), s5=s5,
        e_p2point=e_p2point, e_p2plane=e_p2plane, e_bvar=e_bvar, e_gvar=e_gvar,
        timings=timer.timings,
    )
