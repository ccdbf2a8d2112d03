"""Shared fixtures and small reference helpers used across the test suite."""

import numpy as np
import pytest

from oopt.extraction import TriMesh
from oopt.geometry import Neighborhood, PointCloud
from oopt.training import icosphere


def brute_neighborhood(points: np.ndarray, k: int) -> Neighborhood:
    """Reference KNN built with a plain sorted distance matrix.

    Ties resolve by index because argsort is stable, matching the
    package convention.
    """
    pts = np.asarray(points, dtype=np.float64)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    dists = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return Neighborhood(indices=order.astype(np.int64), distances=dists)


def fibonacci_sphere(n: int, radius: float = 1.0, seed: int | None = None) -> np.ndarray:
    """Deterministic, roughly even point distribution on a sphere."""
    i = np.arange(n, dtype=np.float64) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    pts = np.stack([np.sin(phi) * np.cos(theta),
                    np.sin(phi) * np.sin(theta),
                    np.cos(phi)], axis=1) * radius
    if seed is not None:
        rng = np.random.default_rng(seed)
        pts += rng.normal(scale=1e-3, size=pts.shape)
    return pts


@pytest.fixture(scope="session")
def sphere_l2() -> TriMesh:
    return icosphere(level=2)


@pytest.fixture(scope="session")
def sphere_l3() -> TriMesh:
    return icosphere(level=3)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture()
def small_cloud(rng) -> PointCloud:
    return PointCloud(points=fibonacci_sphere(64, seed=7))
