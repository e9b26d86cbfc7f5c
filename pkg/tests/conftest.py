import numpy as np
import pytest

from piezoctrl.fespace import ScalarSpace, VectorSpace, assemble
from piezoctrl.harness import DIRICHLET_RULES, reference_tet_mesh
from piezoctrl.materials import paper_benchmark_materials
from piezoctrl.mesh import build_cube_mesh


@pytest.fixture(scope="session")
def benchmark_materials():
    return paper_benchmark_materials()


@pytest.fixture(scope="session")
def cube2_xyz0():
    return build_cube_mesh(2, DIRICHLET_RULES["xyz0"])


@pytest.fixture(scope="session")
def cube2_yfaces():
    return build_cube_mesh(2, DIRICHLET_RULES["yfaces"])


@pytest.fixture(scope="session")
def ops_cube2_xyz0(cube2_xyz0, benchmark_materials):
    space_s = ScalarSpace(cube2_xyz0, 2)
    space_v = VectorSpace(space_s)
    return assemble(space_v, space_s, benchmark_materials)


@pytest.fixture(scope="session")
def ops_cube2_yfaces(cube2_yfaces, benchmark_materials):
    space_s = ScalarSpace(cube2_yfaces, 2)
    space_v = VectorSpace(space_s)
    return assemble(space_v, space_s, benchmark_materials)


@pytest.fixture(scope="session")
def ops_single_tet(benchmark_materials):
    mesh = reference_tet_mesh(dirichlet=True)
    space_s = ScalarSpace(mesh, 2)
    space_v = VectorSpace(space_s)
    return assemble(space_v, space_s, benchmark_materials)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
