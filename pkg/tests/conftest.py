import numpy as np
import pytest

from pcqa import _accel
from pcqa.pointcloud import PointCloud


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test once per kernel backend."""
    prev = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_cloud(rng, n, scale=1.0):
    return PointCloud(rng.random((n, 3)) * scale, rng.integers(0, 256, (n, 3), dtype=np.uint8))


def fibonacci_sphere(n, radius=1.0):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return radius * np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def grid_plane(n_side, spacing=1.0):
    g = np.arange(n_side, dtype=np.float64) * spacing
    xx, yy = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])


def jittered_plane(rng, n_side, jitter=0.3):
    """Plane z=0 with in-plane jitter so neighborhoods have no exact distance ties."""
    p = grid_plane(n_side)
    p[:, :2] += rng.uniform(-jitter, jitter, (len(p), 2))
    return p


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def fixture_clouds(rng):
    """Named synthetic clouds used by the identity suites."""
    n_sph = 400
    sphere = fibonacci_sphere(n_sph, 50.0)
    plane = jittered_plane(rng, 15)
    blob = rng.normal(size=(300, 3)) * 10
    cube = np.array(np.meshgrid(*[np.arange(7.0)] * 3, indexing="ij")).reshape(3, -1).T
    cube_col = np.clip(np.column_stack([cube[:, 0] * 40, cube[:, 1] * 40, cube[:, 2] * 40]), 0, 255)
    return {
        "plane": PointCloud(plane, rng.integers(0, 256, (len(plane), 3), dtype=np.uint8)),
        "sphere": PointCloud(sphere, rng.integers(0, 256, (n_sph, 3), dtype=np.uint8)),
        "blob": PointCloud(blob, rng.integers(0, 256, (300, 3), dtype=np.uint8)),
        "gradient_cube": PointCloud(cube, cube_col.astype(np.uint8)),
        "single_point": PointCloud([[1.0, 2.0, 3.0]], [[10, 200, 30]]),
    }
