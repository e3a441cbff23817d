"""Shared fixtures: small structured meshes, periodic cells and materials."""

import numpy as np
import pytest

from src.config import Material, PeriodicSpec
from src.mesh import detect_pbc_pairs, parse_mesh_text
from src.mesh_builders import box_mesh

UNIT_TET = """nodes 4 tets 1
0 0 0
1 0 0
0 1 0
0 0 1
0 1 2 3 0
"""


@pytest.fixture
def unit_tet():
    return parse_mesh_text(UNIT_TET)


@pytest.fixture
def cube_cell():
    """Unit cube periodic along x, y and z."""
    return PeriodicSpec(True, True, True, 1.0, 1.0, 1.0)


@pytest.fixture
def periodic_cube(cube_cell):
    """4^3 Kuhn box paired on all three axes (N = 125, N' = 64)."""
    return detect_pbc_pairs(box_mesh((1.0, 1.0, 1.0), (4, 4, 4)), cube_cell)


@pytest.fixture
def permalloy():
    return Material(Ms=800.0, A_ex=1.3e-6, alpha=0.02)


@pytest.fixture
def materials(permalloy):
    return {0: permalloy}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
