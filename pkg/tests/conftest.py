import numpy as np
import pytest

from pupilkit import GridSpec, build_zernike_basis, rasterize_hull, regular_polygon_spec
from pupilkit.pupils import PupilMask


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(n=64, circle_diameter_px=32)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(n=32, circle_diameter_px=16)


@pytest.fixture(scope="session")
def triangle64(grid64):
    return rasterize_hull(regular_polygon_spec(3), grid64)


@pytest.fixture(scope="session")
def circle64(grid64):
    return PupilMask(values=grid64.circle_mask(), grid=grid64)


@pytest.fixture(scope="session")
def basis64(grid64):
    return build_zernike_basis(grid64, range(2, 16))


def random_symmetric_hull(rng):
    """Centro-symmetric convex polygon: the hull of a point cloud and its negation."""
    from scipy.spatial import ConvexHull

    from pupilkit import ConvexHullSpec

    k = int(rng.integers(3, 8))
    r = np.sqrt(rng.uniform(0.2, 1.0, size=k))
    t = rng.uniform(0.0, 2.0 * np.pi, size=k)
    pts = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    pts = np.concatenate([pts, -pts])
    hull = ConvexHull(pts)
    return ConvexHullSpec(vertices=pts[hull.vertices])
