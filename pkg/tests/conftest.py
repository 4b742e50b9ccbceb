import numpy as np
import pytest

from mesh_io import TriMesh, cone_interior, make_icosphere, make_torus, make_voxel_genus_solid, torus_interior

# (R, r, nu, nv) small enough for exact rank tests
TORUS = (2.0, 0.7, 6, 9)


def box_mesh(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriMesh:
    """Closed axis-aligned box, outward winding"""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    f = np.array([
        [0, 2, 1], [0, 3, 2],      # z = z0
        [4, 5, 6], [4, 6, 7],      # z = z1
        [0, 1, 5], [0, 5, 4],      # y = y0
        [3, 7, 6], [3, 6, 2],      # y = y1
        [0, 4, 7], [0, 7, 3],      # x = x0
        [1, 2, 6], [1, 6, 5],      # x = x1
    ])
    return TriMesh(v, f)


def square_mesh(z: float = 0.0) -> TriMesh:
    """Open unit square in the plane at height z"""
    v = np.array([[0.0, 0.0, z], [1.0, 0.0, z], [1.0, 1.0, z], [0.0, 1.0, z]])
    return TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


@pytest.fixture(scope="session")
def torus():
    return make_torus(*TORUS)


@pytest.fixture(scope="session")
def torus_solid():
    return torus_interior(*TORUS)


@pytest.fixture(scope="session")
def sphere():
    return make_icosphere(1)


@pytest.fixture(scope="session")
def sphere_solid(sphere):
    return cone_interior(sphere)


@pytest.fixture(scope="session")
def plate2():
    return make_voxel_genus_solid(2, 12)


@pytest.fixture(scope="session")
def box():
    return box_mesh()
