"""Colored point cloud container and sRGB -> CIE L* lightness conversion."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

# CIE L* piecewise constants
_DELTA = 6.0 / 29.0
_DELTA3 = _DELTA ** 3
# sRGB (D65) luminance weights
_LUMA = (0.2126, 0.7152, 0.0722)


def _readonly(a):
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N colored points.

    Attributes
    ----------
    positions : (N, 3) float64
    colors : (N, 3) uint8 sRGB
    lightness : (N,) float64 in [0, 100], or None until computed
    normals : (N, 3) float64 unit vectors, or None until estimated

    Arrays are copied on construction and made read-only.
    """

    positions: np.ndarray
    colors: np.ndarray
    lightness: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        n = pos.shape[0]
        if n < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")

        col = np.asarray(self.colors)
        if col.shape != (n, 3):
            raise ValueError(f"colors must be ({n}, 3), got {col.shape}")
        if col.dtype != np.uint8:
            if np.any(col < 0) or np.any(col > 255) or np.any(col != np.round(col)):
                raise ValueError("colors must be 8-bit integers in [0, 255]")
        col = np.array(col, dtype=np.uint8, copy=True)

        light = None
        if self.lightness is not None:
            light = np.array(self.lightness, dtype=np.float64, copy=True)
            if light.shape != (n,):
                raise ValueError(f"lightness must be ({n},), got {light.shape}")
            if np.any(light < 0.0) or np.any(light > 100.0) or not np.all(np.isfinite(light)):
                raise ValueError("lightness values must lie in [0, 100]")

        nrm = None
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=np.float64, copy=True)
            if nrm.shape != (n, 3):
                raise ValueError(f"normals must be ({n}, 3), got {nrm.shape}")
            if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
                raise ValueError("normals must have unit length")

        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "colors", _readonly(col))
        object.__setattr__(self, "lightness", None if light is None else _readonly(light))
        object.__setattr__(self, "normals", None if nrm is None else _readonly(nrm))

    def __len__(self):
        return self.positions.shape[0]

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    def replace(self, **changes) -> "PointCloud":
        return dataclasses.replace(self, **changes)

    def take(self, indices) -> "PointCloud":
        """Sub-cloud (with repetition allowed) carrying every populated attribute."""
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.positions[idx],
            self.colors[idx],
            None if self.lightness is None else self.lightness[idx],
            None if self.normals is None else self.normals[idx],
        )

    def scaled(self, factor: float) -> "PointCloud":
        """Uniformly rescaled coordinates; normals and colors are unchanged."""
        return self.replace(positions=self.positions * float(factor))


def srgb_to_linear(values):
    """Inverse sRGB companding of 8-bit (or [0, 1] float) channel values."""
    v = np.asarray(values)
    c = v.astype(np.float64) / 255.0 if v.dtype == np.uint8 or np.issubdtype(v.dtype, np.integer) else v.astype(np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def luminance_to_lightness(y):
    """CIE L* from relative luminance Y (white = 1)."""
    y = np.asarray(y, dtype=np.float64)
    f = np.where(y > _DELTA3, np.cbrt(y), y / (3.0 * _DELTA * _DELTA) + 4.0 / 29.0)
    return np.clip(116.0 * f - 16.0, 0.0, 100.0)


# per-channel contribution to Y for every 8-bit code
_LINEAR_LUT = srgb_to_linear(np.arange(256, dtype=np.uint8))


def rgb_to_lightness(colors) -> np.ndarray:
    """L* in [0, 100] for an (N, 3) array of 8-bit sRGB colors."""
    col = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    lin = _LINEAR_LUT[col]
    y = _LUMA[0] * lin[:, 0] + _LUMA[1] * lin[:, 1] + _LUMA[2] * lin[:, 2]
    return luminance_to_lightness(y)


def compute_lightness(cloud: PointCloud) -> PointCloud:
    """Return ``cloud`` with its lightness channel populated from the colors."""
    return cloud.replace(lightness=rgb_to_lightness(cloud.colors))
