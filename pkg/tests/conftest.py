"""
Shared fixtures: small meshes, assembled systems and decompositions
"""
import numpy as np
import pytest

from curlgfem.decomp import build_decomposition
from curlgfem.mesh import build_structured_mesh
from curlgfem.problems import manufactured_problem


@pytest.fixture(scope="session")
def unit_mesh():
    """4x4 cells on the unit square"""
    return build_structured_mesh(4, 4)


@pytest.fixture(scope="session")
def holed_mesh():
    """4x4 cells with the central 2x2 block removed"""
    return build_structured_mesh(4, 4, holes=[(0.25, 0.25, 0.75, 0.75)])


@pytest.fixture(scope="session")
def manufactured_system():
    return manufactured_problem(mesh_cells=16).assemble()


@pytest.fixture(scope="session")
def small_system():
    return manufactured_problem(mesh_cells=4).assemble()


@pytest.fixture(scope="session")
def decomposition(manufactured_system):
    """2x2 subdomains, one overlap layer, three oversampling layers"""
    return build_decomposition(manufactured_system.mesh, 2, 1, 3, dofmap=manufactured_system.dofmap)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
