import numpy as np
import pytest

from spiral4d import shapes
from spiral4d.mesh import build_adjacency
from spiral4d.sampling import build_hierarchy
from spiral4d.spiral import build_spiral_table, choose_reference_vertex, nearest_vertex


@pytest.fixture(scope="session")
def tetra():
    return shapes.tetrahedron(edge_length=1.0)


@pytest.fixture(scope="session")
def fan7():
    return shapes.fan(6)


@pytest.fixture(scope="session")
def ico162():
    return shapes.icosphere(2, radius=10.0)


@pytest.fixture(scope="session")
def ico642():
    return shapes.icosphere(3, radius=85.0)


@pytest.fixture(scope="session")
def ico2562():
    return shapes.icosphere(4, radius=85.0)


@pytest.fixture(scope="session")
def template162():
    return shapes.face_template(2)


def make_tables(mesh, hierarchy, k=1, reference="max_z"):
    ref_fine = choose_reference_vertex(mesh, reference)
    ref_pos = mesh.vertices[ref_fine]
    return [
        build_spiral_table(m, k=k, reference_vertex=nearest_vertex(m, ref_pos),
                           level=lvl)
        for lvl, m in enumerate(hierarchy.levels)
    ]


@pytest.fixture(scope="session")
def small_setup(template162):
    """162-vertex face template with a 3-level hierarchy and spiral tables."""
    hierarchy = build_hierarchy(template162, [5, 5])
    tables = make_tables(template162, hierarchy)
    return template162, hierarchy, tables


@pytest.fixture(scope="session")
def fan_adj(fan7):
    return build_adjacency(fan7)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
