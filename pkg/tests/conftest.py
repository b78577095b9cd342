import numpy as np
import pytest

from partvote.geometry import PointCloud


def unit_sphere_cloud(n, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return PointCloud(d.copy(), d.copy())


def plane_grid_cloud(side=10, spacing=0.1, z=0.0, flip=False):
    xs = np.arange(side) * spacing
    xx, yy = np.meshgrid(xs, xs)
    pos = np.stack([xx.ravel(), yy.ravel(), np.full(side * side, z)], axis=1)
    nrm = np.tile([0.0, 0.0, -1.0 if flip else 1.0], (side * side, 1))
    return PointCloud(pos, nrm)


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(0)
