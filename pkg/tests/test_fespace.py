import numpy as np
import pytest

from piezoctrl.fespace import (
    AssemblyError,
    LagrangeBasis,
    ScalarSpace,
    VectorSpace,
    apply_grounding,
    assemble,
    fe_errors_scalar,
    project_L2_weighted,
)
from piezoctrl.harness import (
    check_assembly_oracle,
    dense_assembly_oracle,
    reference_tet_mesh,
)
from piezoctrl.mesh import build_cube_mesh
from piezoctrl.quadrature import tetrahedron_rule


# ---------------------------------------------------------------------------
# reference basis


@pytest.mark.parametrize("dim,degree", [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3)])
def test_basis_nodal_property(dim, degree):
    basis = LagrangeBasis(dim, degree)
    vals = basis.tabulate(basis.nodes)
    assert np.allclose(vals, np.eye(basis.n_basis), atol=1e-12)


def test_basis_partition_of_unity(rng):
    basis = LagrangeBasis(3, 2)
    pts = rng.uniform(0, 0.3, size=(20, 3))
    assert np.allclose(basis.tabulate(pts).sum(axis=1), 1.0, atol=1e-13)
    assert np.allclose(basis.tabulate_grad(pts).sum(axis=1), 0.0, atol=1e-12)


def test_basis_reproduces_polynomials(rng):
    basis = LagrangeBasis(3, 2)
    coeff = lambda P: 1.0 + 2 * P[:, 0] - P[:, 1] * P[:, 2] + P[:, 0] ** 2
    nodal = coeff(basis.nodes)
    pts = rng.uniform(0, 0.3, size=(15, 3))
    assert np.allclose(basis.tabulate(pts) @ nodal, coeff(pts), atol=1e-12)


# ---------------------------------------------------------------------------
# spaces


@pytest.mark.parametrize("m,k", [(1, 1), (2, 1), (1, 2), (2, 2), (1, 3), (2, 3)])
def test_scalar_space_dof_count_on_cube(m, k):
    # every dof of the six-tet cube mesh lies on the (kM+1)^3 lattice
    mesh = build_cube_mesh(m)
    space = ScalarSpace(mesh, k)
    assert space.n_dofs == (k * m + 1) ** 3


def test_scalar_space_contains_constants(cube2_xyz0, rng):
    space = ScalarSpace(cube2_xyz0, 2)
    ones = space.interpolate(lambda P: np.ones(len(P)))
    pts = rng.uniform(0, 1, size=(10, 3))
    # evaluate through the element that owns each quadrature point
    quad = tetrahedron_rule(2)
    phi = space.basis.tabulate(quad.points)
    vals = phi @ ones[space.elem_dofs.T]
    assert np.allclose(vals, 1.0, atol=1e-12)


def test_vector_space_constrains_dirichlet_dofs(cube2_xyz0):
    space = VectorSpace(ScalarSpace(cube2_xyz0, 2))
    coords = space.scalar.dof_coords
    for dof in space.constrained:
        p = coords[dof // 3]
        assert min(abs(p[0]), abs(p[1]), abs(p[2])) < 1e-12
    # interpolation of a field vanishing on the Dirichlet part is zero there
    fun = lambda P: np.stack(
        [P[:, 0] * P[:, 1] * P[:, 2]] * 3, axis=1
    )
    coeffs = space.interpolate(fun)
    assert np.abs(coeffs[space.constrained]).max() < 1e-14


def test_dirichlet_free_split_consistent(cube2_xyz0):
    space = VectorSpace(ScalarSpace(cube2_xyz0, 2))
    assert space.n_free + space.constrained.size == space.n_dofs
    assert np.intersect1d(space.free, space.constrained).size == 0


# ---------------------------------------------------------------------------
# assembled operators


def test_assembly_oracle_dense():
    result = check_assembly_oracle()
    assert result["passed"], result


def test_assembled_blocks_symmetric(ops_cube2_xyz0):
    ops = ops_cube2_xyz0
    assert np.abs((ops.mass - ops.mass.T)).max() < 1e-12
    assert np.abs((ops.k_uu - ops.k_uu.T)).max() < 1e-11
    assert np.abs((ops.k_pp - ops.k_pp.T)).max() < 1e-12
    assert np.abs((ops.k_pu - ops.k_up.T)).max() < 1e-13


def test_kpp_kills_constants(ops_cube2_xyz0):
    ones = np.ones(ops_cube2_xyz0.n_psi)
    assert np.abs(ops_cube2_xyz0.k_pp @ ones).max() < 1e-11


def test_boundary_map_total_area(ops_cube2_xyz0):
    ops = ops_cube2_xyz0
    ones_psi = np.ones(ops.n_psi)
    ones_faces = np.ones(ops.n_faces)
    total = ones_psi @ (ops.bmap @ ones_faces)
    assert abs(total - 6.0) < 1e-12


def test_control_load_against_constant_test_function(ops_cube2_xyz0, rng):
    # <z, 1>_Gamma = sum of face areas times values; vanishes at zero mean
    ops = ops_cube2_xyz0
    z = rng.standard_normal(ops.n_faces)
    ones_psi = np.ones(ops.n_psi)
    assert abs(ones_psi @ (ops.bmap @ z) - ops.face_areas @ z) < 1e-12
    z -= (ops.face_areas @ z) / ops.face_areas.sum()
    assert abs(ones_psi @ (ops.bmap @ z)) < 1e-12


def test_positivity_surrogates(ops_cube2_xyz0, rng):
    ops = ops_cube2_xyz0
    psi = apply_grounding(ops.ground, rng.standard_normal(ops.n_psi))
    assert psi @ (ops.k_pp @ psi) > 0
    u = rng.standard_normal(ops.n_free)
    assert u @ (ops.k_uu @ u) > 0
    assert u @ (ops.mass @ u) > 0


def test_coupled_form_against_dense_oracle(rng):
    # w K_uu u + w K_up psi - phi K_pu u + phi K_pp psi equals the
    # quadrature-loop evaluation of the coupled bilinear form
    from piezoctrl.materials import (
        BENCHMARK_DIELECTRIC,
        BENCHMARK_PIEZO,
        IsotropicElasticity,
        MaterialSet,
        constant_matrix_field,
        constant_scalar_field,
    )

    mats = MaterialSet(
        rho=constant_scalar_field(1.0),
        stiffness=IsotropicElasticity(
            constant_scalar_field(1.3), constant_scalar_field(0.8)
        ).stiffness(),
        piezo=constant_matrix_field(BENCHMARK_PIEZO),
        dielectric=constant_matrix_field(BENCHMARK_DIELECTRIC),
    )
    mesh = reference_tet_mesh(dirichlet=False)
    space_s = ScalarSpace(mesh, 2)
    space_v = VectorSpace(space_s)
    ops = assemble(space_v, space_s, mats)
    dense = dense_assembly_oracle(
        space_v, space_s, 1.0, 1.3, 0.8, BENCHMARK_PIEZO, BENCHMARK_DIELECTRIC
    )
    u = rng.standard_normal(space_v.n_dofs)
    w = rng.standard_normal(space_v.n_dofs)
    psi = rng.standard_normal(space_s.n_dofs)
    phi = rng.standard_normal(space_s.n_dofs)
    ours = (
        w @ (ops.k_uu @ u)
        + w @ (ops.k_up @ psi)
        - phi @ (ops.k_pu @ u)
        + phi @ (ops.k_pp @ psi)
    )
    theirs = (
        w @ dense["k_uu"] @ u
        + w @ dense["k_up"] @ psi
        - phi @ dense["k_up"].T @ u
        + phi @ dense["k_pp"] @ psi
    )
    assert abs(ours - theirs) < 1e-12 * (1 + abs(theirs))


def test_quadrature_degree_rejected(cube2_xyz0, benchmark_materials):
    space_s = ScalarSpace(cube2_xyz0, 2)
    space_v = VectorSpace(space_s)
    with pytest.raises(AssemblyError):
        assemble(space_v, space_s, benchmark_materials, quad=tetrahedron_rule(2))


def test_inverted_element_detected(benchmark_materials):
    mesh = build_cube_mesh(1)
    bad_tets = mesh.tets.copy()
    bad_tets[0, [0, 1]] = bad_tets[0, [1, 0]]
    bad = type(mesh)(
        vertices=mesh.vertices,
        tets=bad_tets,
        boundary_faces=mesh.boundary_faces,
        face_tags=mesh.face_tags,
        dirichlet_tags=mesh.dirichlet_tags,
        neumann_tags=mesh.neumann_tags,
        face_parent_tet=mesh.face_parent_tet,
    )
    space_s = ScalarSpace(bad, 1)
    space_v = VectorSpace(space_s)
    with pytest.raises(AssemblyError):
        assemble(space_v, space_s, benchmark_materials)


# ---------------------------------------------------------------------------
# grounding and projection


def test_grounding_constant_and_idempotence(ops_cube2_xyz0, rng):
    ops = ops_cube2_xyz0
    ones = np.ones(ops.n_psi)
    assert np.abs(apply_grounding(ops.ground, ones)).max() < 1e-14
    psi = rng.standard_normal(ops.n_psi)
    g1 = apply_grounding(ops.ground, psi)
    assert abs(ops.ground @ g1) < 1e-12 * np.linalg.norm(psi)
    g2 = apply_grounding(ops.ground, g1)
    assert np.abs(g2 - g1).max() < 1e-14 * (1 + np.abs(g1).max())


def test_projection_reproduces_members(cube2_xyz0, benchmark_materials):
    space_s = ScalarSpace(cube2_xyz0, 2)
    target = lambda P: 1.0 + P[:, 0] ** 2 - 2 * P[:, 1] * P[:, 2]
    proj = project_L2_weighted(space_s, target, benchmark_materials.rho)
    exact = space_s.interpolate(target)
    assert np.abs(proj - exact).max() < 1e-12 * np.abs(exact).max()
    zero = project_L2_weighted(
        space_s, lambda P: np.zeros(len(P)), benchmark_materials.rho
    )
    assert np.abs(zero).max() < 1e-14


def test_projection_respects_dirichlet(cube2_xyz0, benchmark_materials):
    space_v = VectorSpace(ScalarSpace(cube2_xyz0, 2))
    target = lambda P: np.stack(
        [P[:, 0] * P[:, 1] * P[:, 2], P[:, 0] * P[:, 1] * P[:, 2], P[:, 0] * P[:, 1] * P[:, 2]],
        axis=1,
    )
    proj_free = project_L2_weighted(space_v, target, benchmark_materials.rho)
    full = space_v.combine(proj_free)
    assert np.abs(full[space_v.constrained]).max() == 0.0


def test_projection_convergence_rate(benchmark_materials):
    # cubic order: observed rate climbs under refinement and exceeds 2.8
    # once the global projection leaves its coarse-level regime
    target = lambda P: np.exp(0.4 * (P[:, 0] + 0.5 * P[:, 1] - 0.3 * P[:, 2]))
    grad = lambda P: target(P)[:, None] * np.array([0.4, 0.2, -0.12])
    errs = []
    for m in (2, 4, 8):
        mesh = build_cube_mesh(m)
        space_s = ScalarSpace(mesh, 2)
        proj = project_L2_weighted(space_s, target, benchmark_materials.rho)
        l2, _ = fe_errors_scalar(space_s, proj, target, grad)
        errs.append(l2)
    rate24 = np.log(errs[0] / errs[1]) / np.log(2.0)
    rate48 = np.log(errs[1] / errs[2]) / np.log(2.0)
    assert rate24 > 2.5
    assert rate48 > rate24
    assert rate48 >= 2.8


def test_operator_dump(tmp_path, ops_single_tet):
    ops_single_tet.dump(tmp_path / "blocks")
    text = (tmp_path / "blocks" / "k_pp.txt").read_text().strip().splitlines()
    i, j, v = text[0].split()
    int(i), int(j), float(v)
    assert len(text) == ops_single_tet.k_pp.nnz
