"""Lagrange spaces on tetrahedral meshes and sparse operator assembly.

The scalar space W is continuous piecewise P_k; the vector space V is its
three-fold copy with all degrees of freedom on Dirichlet-tagged boundary
faces constrained to zero. Degrees of freedom are numbered by mesh entity
(vertex, edge, face, cell interior) with orientation resolved through
global vertex indices, so the numbering is deterministic and meshes of
any degree k >= 1 stay conforming.

Assembled blocks, with u the vector field and p the scalar potential:

    mass        (rho u, w)              k_uu  (C eps(u), eps(w))
    k_up        (E grad p, eps(w))      k_pu  (E^T eps(u), grad q)
    k_pp        (kappa grad p, grad q)  bmap  [q, F] -> integral_F q
    ground      q -> integral_Omega q

k_pu is the transpose of k_up since both discretize the same integral.
The potential is pinned by appending the grounding functional as a
Lagrange-multiplier row to the scalar block of each linear solve, which
keeps constants in W and leaves the functional configurable.

Assembly loops over elements in a fixed order (vectorized in chunks), so
results are bit-for-bit reproducible; assembled operators are immutable.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .materials import MaterialSet
from .mesh import Mesh
from .quadrature import (
    QuadratureRule,
    simplex_monomial_integral,
    tetrahedron_rule,
    triangle_rule,
)

_CHUNK = 512


class AssemblyError(Exception):
    """Raised for inverted elements or inconsistent assembly input."""


@lru_cache(maxsize=None)
def _lattice(dim, degree):
    """Barycentric multi-indices (length dim+1, sum degree), fixed order."""
    out = []
    for rest in product(range(degree + 1), repeat=dim):
        if sum(rest) <= degree:
            out.append((degree - sum(rest),) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def _monomials(dim, degree):
    out = []
    for exps in product(range(degree + 1), repeat=dim):
        if sum(exps) <= degree:
            out.append(exps)
    return tuple(out)


class LagrangeBasis:
    """Nodal P_k basis on the reference simplex via a monomial Vandermonde."""

    def __init__(self, dim, degree):
        if degree < 1:
            raise ValueError(f"polynomial degree must be >= 1, got {degree}")
        self.dim = dim
        self.degree = degree
        self.nodes_bary = _lattice(dim, degree)
        self.nodes = np.array([b[1:] for b in self.nodes_bary], dtype=float) / degree
        self.exponents = _monomials(dim, degree)
        V = self._eval_monomials(self.nodes)
        self.coeffs = np.linalg.inv(V)
        self.n_basis = len(self.nodes_bary)

    def _eval_monomials(self, pts):
        pts = np.atleast_2d(pts)
        M = np.ones((pts.shape[0], len(self.exponents)))
        for m, exps in enumerate(self.exponents):
            for d, e in enumerate(exps):
                if e:
                    M[:, m] *= pts[:, d] ** e
        return M

    def _eval_monomial_grads(self, pts):
        pts = np.atleast_2d(pts)
        G = np.zeros((pts.shape[0], len(self.exponents), self.dim))
        for m, exps in enumerate(self.exponents):
            for d in range(self.dim):
                if exps[d] == 0:
                    continue
                g = np.full(pts.shape[0], float(exps[d]))
                for dd, e in enumerate(exps):
                    p = e - 1 if dd == d else e
                    if p:
                        g *= pts[:, dd] ** p
                G[:, m, d] = g
        return G

    def tabulate(self, pts):
        """Basis values, shape (npts, n_basis)."""
        return self._eval_monomials(pts) @ self.coeffs

    def tabulate_grad(self, pts):
        """Reference gradients, shape (npts, n_basis, dim)."""
        G = self._eval_monomial_grads(pts)
        return np.einsum("qmd,mi->qid", G, self.coeffs)

    def integrals(self):
        """Exact integrals of each basis function over the reference simplex."""
        mono_ints = np.array(
            [simplex_monomial_integral(e) for e in self.exponents]
        )
        return mono_ints @ self.coeffs


def _entity_key(a, global_ids, cell, local):
    """Registry key of the lattice node with barycentric numerators a."""
    supp = [i for i, ai in enumerate(a) if ai > 0]
    if len(supp) == 1:
        return ("v", int(global_ids[supp[0]]))
    if len(supp) == 2:
        gi, gj = int(global_ids[supp[0]]), int(global_ids[supp[1]])
        if gi < gj:
            return ("e", gi, gj, a[supp[0]])
        return ("e", gj, gi, a[supp[1]])
    if len(supp) == 3:
        pairs = sorted((int(global_ids[i]), a[i]) for i in supp)
        return ("f", pairs[0][0], pairs[1][0], pairs[2][0], pairs[0][1], pairs[1][1])
    return ("i", cell, local)


class ScalarSpace:
    """Continuous P_k space on a tetrahedral mesh.

    Contains the constant functions for every k, so the grounding
    functional is well defined on it.
    """

    def __init__(self, mesh: Mesh, degree: int = 2):
        self.mesh = mesh
        self.degree = degree
        self.basis = LagrangeBasis(3, degree)
        self.face_basis = LagrangeBasis(2, degree)

        registry = {}
        nloc = self.basis.n_basis
        elem_dofs = np.empty((mesh.n_tets, nloc), dtype=int)
        coords = []
        for t in range(mesh.n_tets):
            tet = mesh.tets[t]
            tet_verts = mesh.vertices[tet]
            for local, a in enumerate(self.basis.nodes_bary):
                key = _entity_key(a, tet, t, local)
                dof = registry.get(key)
                if dof is None:
                    dof = len(registry)
                    registry[key] = dof
                    coords.append(np.array(a, dtype=float) @ tet_verts / degree)
                elem_dofs[t, local] = dof
        self._registry = registry
        self.elem_dofs = elem_dofs
        self.dof_coords = np.array(coords)
        self.n_dofs = len(registry)

        # dofs of each boundary face, ordered like the reference-triangle
        # lattice of ``face_basis``
        nloc2 = self.face_basis.n_basis
        self.face_dofs = np.empty((mesh.n_boundary_faces, nloc2), dtype=int)
        for f, tri in enumerate(mesh.boundary_faces):
            for local, a in enumerate(self.face_basis.nodes_bary):
                key = _entity_key(a, tri, None, None)
                self.face_dofs[f, local] = registry[key]

    def interpolate(self, fun):
        """Nodal interpolation; fun maps (n, 3) points to (n,) values."""
        return np.asarray(fun(self.dof_coords), dtype=float)

    def dirichlet_dofs(self):
        """Scalar dofs supported on Dirichlet-tagged boundary faces."""
        faces = self.mesh.dirichlet_face_indices()
        if faces.size == 0:
            return np.array([], dtype=int)
        return np.unique(self.face_dofs[faces].ravel())


class VectorSpace:
    """Three-component copy of a scalar space with Dirichlet constraints.

    Vector dof 3*s + c is component c of scalar dof s. ``free`` and
    ``constrained`` index the full coefficient vector.
    """

    def __init__(self, scalar: ScalarSpace):
        self.scalar = scalar
        self.mesh = scalar.mesh
        self.degree = scalar.degree
        self.n_dofs = 3 * scalar.n_dofs
        con_scalar = scalar.dirichlet_dofs()
        self.constrained = np.sort(
            np.concatenate([3 * con_scalar + c for c in range(3)])
            if con_scalar.size
            else np.array([], dtype=int)
        )
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained] = False
        self.free = np.flatnonzero(mask)
        self.n_free = self.free.size

    def interpolate(self, fun):
        """Full coefficient vector of the nodal interpolant of fun."""
        vals = np.asarray(fun(self.scalar.dof_coords), dtype=float)
        return vals.reshape(-1)

    def combine(self, free_vals, constrained_vals=None):
        full = np.zeros(self.n_dofs)
        full[self.free] = free_vals
        if constrained_vals is not None:
            full[self.constrained] = constrained_vals
        return full


@dataclass(frozen=True)
class DiscreteOperators:
    """Assembled sparse blocks of the coupled bilinear form.

    u-blocks are restricted to free dofs; the *_dc companions hold the
    columns of the constrained dofs used for Dirichlet lifting. The
    coupling satisfies k_pu = k_up^T up to the optional fault-injection
    factor of ``assemble``.
    """

    space_v: VectorSpace
    space_s: ScalarSpace
    materials: MaterialSet
    quad_degree: int
    mass: sp.csr_matrix
    mass_dc: sp.csr_matrix
    k_uu: sp.csr_matrix
    k_uu_dc: sp.csr_matrix
    k_up: sp.csr_matrix
    k_pu: sp.csr_matrix
    k_pu_dc: sp.csr_matrix
    k_pp: sp.csr_matrix
    bmap: sp.csr_matrix
    ground: np.ndarray
    face_areas: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_free(self):
        return self.space_v.n_free

    @property
    def n_psi(self):
        return self.space_s.n_dofs

    @property
    def n_faces(self):
        return self.bmap.shape[1]

    def mass_solver(self):
        """Cached factorization of the weighted mass matrix."""
        if "mass" not in self._cache:
            self._cache["mass"] = spla.factorized(self.mass.tocsc())
        return self._cache["mass"]

    def potential_solver(self):
        """Cached factorization of the grounded scalar saddle system."""
        if "potential" not in self._cache:
            g = sp.csr_matrix(self.ground[None, :])
            K = sp.bmat([[self.k_pp, g.T], [g, None]], format="csc")
            self._cache["potential"] = spla.factorized(K)
        return self._cache["potential"]

    def solve_potential(self, rhs):
        """Grounded solve of k_pp psi = rhs; returns (psi, multiplier)."""
        sol = self.potential_solver()(np.concatenate([rhs, [0.0]]))
        return sol[:-1], sol[-1]

    def dump(self, directory):
        """Write each block as text in coordinate (i, j, value) format."""
        import os

        os.makedirs(directory, exist_ok=True)
        blocks = {
            "mass": self.mass,
            "k_uu": self.k_uu,
            "k_up": self.k_up,
            "k_pu": self.k_pu,
            "k_pp": self.k_pp,
            "bmap": self.bmap,
        }
        for name, mat in blocks.items():
            coo = mat.tocoo()
            with open(os.path.join(directory, f"{name}.txt"), "w") as fh:
                for i, j, v in zip(coo.row, coo.col, coo.data):
                    fh.write(f"{i} {j} {v:.17g}\n")
        np.savetxt(os.path.join(directory, "ground.txt"), self.ground)


def _element_geometry(mesh):
    v = mesh.vertices[mesh.tets]
    A = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)
    det = np.linalg.det(A)
    if np.any(det <= 0.0):
        raise AssemblyError(
            f"inverted element {int(np.argmin(det))}: Jacobian determinant {det.min():g}"
        )
    return v[:, 0], A, det


def _strain_matrix(gphys):
    """Engineering-strain operator, (nel, nq, 6, 3*nloc), interleaved dofs."""
    nel, nq, nloc, _ = gphys.shape
    B = np.zeros((nel, nq, 6, 3 * nloc))
    g0, g1, g2 = gphys[..., 0], gphys[..., 1], gphys[..., 2]
    B[:, :, 0, 0::3] = g0
    B[:, :, 1, 1::3] = g1
    B[:, :, 2, 2::3] = g2
    B[:, :, 3, 1::3] = g2
    B[:, :, 3, 2::3] = g1
    B[:, :, 4, 0::3] = g2
    B[:, :, 4, 2::3] = g0
    B[:, :, 5, 0::3] = g1
    B[:, :, 5, 1::3] = g0
    return B


def assemble(
    space_v: VectorSpace,
    space_s: ScalarSpace,
    materials: MaterialSet,
    quad: QuadratureRule = None,
    check_materials: bool = False,
    coupling_perturbation: float = 0.0,
) -> DiscreteOperators:
    """Assemble every block of the coupled system.

    The default quadrature is exact to degree 2k + 2 so non-constant
    coefficients do not degrade convergence rates.

    ``coupling_perturbation`` scales k_pu away from k_up^T; it exists
    only so verification checks can demonstrate that they detect a
    broken adjoint coupling.
    """
    if space_v.scalar.mesh is not space_s.mesh:
        raise AssemblyError("vector and scalar spaces live on different meshes")
    if space_v.degree != space_s.degree:
        raise AssemblyError("vector and scalar spaces must share the degree")
    mesh = space_s.mesh
    k = space_s.degree
    if quad is None:
        quad = tetrahedron_rule(2 * k + 2)
    elif quad.degree < 2 * k + 2:
        raise AssemblyError(
            f"quadrature degree {quad.degree} below required {2 * k + 2}"
        )

    basis = space_s.basis
    phi = basis.tabulate(quad.points)
    gref = basis.tabulate_grad(quad.points)
    nloc = basis.n_basis
    v0, A, det = _element_geometry(mesh)
    invA = np.linalg.inv(A)

    ns = space_s.n_dofs
    nv = 3 * ns
    rows_m, cols_m, vals_m = [], [], []
    rows_k, cols_k, vals_k = [], [], []
    rows_c, cols_c, vals_c = [], [], []
    rows_p, cols_p, vals_p = [], [], []
    ground = np.zeros(ns)

    for start in range(0, mesh.n_tets, _CHUNK):
        sl = slice(start, min(start + _CHUNK, mesh.n_tets))
        Ae, dete = A[sl], det[sl]
        pts = v0[sl][:, None, :] + np.einsum("eij,qj->eqi", Ae, quad.points)
        flat = pts.reshape(-1, 3)
        rho = materials.rho(flat).reshape(pts.shape[:2])
        C = materials.stiffness(flat).reshape(pts.shape[:2] + (6, 6))
        E = materials.piezo(flat).reshape(pts.shape[:2] + (6, 3))
        kap = materials.dielectric(flat).reshape(pts.shape[:2] + (3, 3))
        if check_materials:
            materials.check_at(flat)

        gphys = np.einsum("eji,qnj->eqni", invA[sl], gref)
        Bm = _strain_matrix(gphys)
        wdet = quad.weights[None, :] * dete[:, None]

        m_loc = np.einsum("eq,qi,qj->eij", wdet * rho, phi, phi)
        kuu_loc = np.einsum("eq,eqai,eqab,eqbj->eij", wdet, Bm, C, Bm)
        kup_loc = np.einsum("eq,eqai,eqab,eqjb->eij", wdet, Bm, E, gphys)
        kpp_loc = np.einsum("eq,eqia,eqab,eqjb->eij", wdet, gphys, kap, gphys)
        ground_loc = np.einsum("eq,qi->ei", wdet, phi)

        sdofs = space_s.elem_dofs[sl]
        vdofs = (3 * sdofs[:, :, None] + np.arange(3)[None, None, :]).reshape(
            sdofs.shape[0], -1
        )
        np.add.at(ground, sdofs.ravel(), ground_loc.ravel())

        si = np.broadcast_to(sdofs[:, :, None], kpp_loc.shape)
        sj = np.broadcast_to(sdofs[:, None, :], kpp_loc.shape)
        rows_p.append(si.ravel())
        cols_p.append(sj.ravel())
        vals_p.append(kpp_loc.ravel())

        # vector mass: scalar blocks replicated on each component
        for c in range(3):
            vi = 3 * sdofs + c
            mi = np.broadcast_to(vi[:, :, None], m_loc.shape)
            mj = np.broadcast_to(vi[:, None, :], m_loc.shape)
            rows_m.append(mi.ravel())
            cols_m.append(mj.ravel())
            vals_m.append(m_loc.ravel())

        ki = np.broadcast_to(vdofs[:, :, None], kuu_loc.shape)
        kj = np.broadcast_to(vdofs[:, None, :], kuu_loc.shape)
        rows_k.append(ki.ravel())
        cols_k.append(kj.ravel())
        vals_k.append(kuu_loc.ravel())

        ci = np.broadcast_to(vdofs[:, :, None], kup_loc.shape)
        cj = np.broadcast_to(sdofs[:, None, :], kup_loc.shape)
        rows_c.append(ci.ravel())
        cols_c.append(cj.ravel())
        vals_c.append(kup_loc.ravel())

    def _csr(rows, cols, vals, shape):
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=shape,
        ).tocsr()

    mass_full = _csr(rows_m, cols_m, vals_m, (nv, nv))
    kuu_full = _csr(rows_k, cols_k, vals_k, (nv, nv))
    kup_full = _csr(rows_c, cols_c, vals_c, (nv, ns))
    k_pp = _csr(rows_p, cols_p, vals_p, (ns, ns))

    fr, co = space_v.free, space_v.constrained
    kpu_full = kup_full.T.tocsr()
    ops = DiscreteOperators(
        space_v=space_v,
        space_s=space_s,
        materials=materials,
        quad_degree=quad.degree,
        mass=mass_full[fr][:, fr].tocsr(),
        mass_dc=mass_full[fr][:, co].tocsr(),
        k_uu=kuu_full[fr][:, fr].tocsr(),
        k_uu_dc=kuu_full[fr][:, co].tocsr(),
        k_up=kup_full[fr].tocsr(),
        k_pu=(1.0 + coupling_perturbation) * kpu_full[:, fr].tocsr(),
        k_pu_dc=kpu_full[:, co].tocsr(),
        k_pp=k_pp,
        bmap=_boundary_map(space_s),
        ground=ground,
        face_areas=mesh.face_areas(),
    )
    return ops


def _boundary_map(space_s: ScalarSpace) -> sp.csr_matrix:
    """bmap[q, F] = integral over boundary face F of scalar basis q."""
    mesh = space_s.mesh
    ref_int = space_s.face_basis.integrals()
    areas = mesh.face_areas()
    nf = mesh.n_boundary_faces
    rows = space_s.face_dofs.ravel()
    cols = np.repeat(np.arange(nf), space_s.face_basis.n_basis)
    vals = (2.0 * areas[:, None] * ref_int[None, :]).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(space_s.n_dofs, nf)).tocsr()


# ---------------------------------------------------------------------------
# load vectors


def vector_volume_load(space_v: VectorSpace, fun, quad: QuadratureRule):
    """Full-length load of (f, w) for a vector field f(P) -> (n, 3)."""
    space_s = space_v.scalar
    mesh = space_s.mesh
    phi = space_s.basis.tabulate(quad.points)
    v0, A, det = _element_geometry(mesh)
    load = np.zeros(space_v.n_dofs)
    for start in range(0, mesh.n_tets, _CHUNK):
        sl = slice(start, min(start + _CHUNK, mesh.n_tets))
        pts = v0[sl][:, None, :] + np.einsum("eij,qj->eqi", A[sl], quad.points)
        f = np.asarray(fun(pts.reshape(-1, 3))).reshape(pts.shape)
        wdet = quad.weights[None, :] * det[sl][:, None]
        loc = np.einsum("eq,eqc,qn->enc", wdet, f, phi)
        vdofs = 3 * space_s.elem_dofs[sl][:, :, None] + np.arange(3)[None, None, :]
        np.add.at(load, vdofs.ravel(), loc.ravel())
    return load


def scalar_volume_load(space_s: ScalarSpace, fun, quad: QuadratureRule):
    """Full-length load of (f, q) for a scalar field f(P) -> (n,)."""
    mesh = space_s.mesh
    phi = space_s.basis.tabulate(quad.points)
    v0, A, det = _element_geometry(mesh)
    load = np.zeros(space_s.n_dofs)
    for start in range(0, mesh.n_tets, _CHUNK):
        sl = slice(start, min(start + _CHUNK, mesh.n_tets))
        pts = v0[sl][:, None, :] + np.einsum("eij,qj->eqi", A[sl], quad.points)
        f = np.asarray(fun(pts.reshape(-1, 3))).reshape(pts.shape[:2])
        wdet = quad.weights[None, :] * det[sl][:, None]
        loc = np.einsum("eq,qn->en", wdet * f, phi)
        np.add.at(load, space_s.elem_dofs[sl].ravel(), loc.ravel())
    return load


def _face_quad_points(mesh, faces, rule):
    verts = mesh.vertices[mesh.boundary_faces[faces]]
    b0 = verts[:, 0]
    e1 = verts[:, 1] - verts[:, 0]
    e2 = verts[:, 2] - verts[:, 0]
    pts = (
        b0[:, None, :]
        + rule.points[None, :, 0, None] * e1[:, None, :]
        + rule.points[None, :, 1, None] * e2[:, None, :]
    )
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    return pts, areas


def scalar_boundary_load(space_s: ScalarSpace, fun, faces=None, rule=None):
    """Full-length load of <g, q>_Gamma over the given boundary faces."""
    mesh = space_s.mesh
    if faces is None:
        faces = np.arange(mesh.n_boundary_faces)
    faces = np.asarray(faces, dtype=int)
    if rule is None:
        rule = triangle_rule(2 * space_s.degree + 2)
    phi2 = space_s.face_basis.tabulate(rule.points)
    pts, areas = _face_quad_points(mesh, faces, rule)
    g = np.asarray(fun(pts.reshape(-1, 3))).reshape(pts.shape[:2])
    loc = 2.0 * areas[:, None] * np.einsum("q,fq,qn->fn", rule.weights, g, phi2)
    load = np.zeros(space_s.n_dofs)
    np.add.at(load, space_s.face_dofs[faces].ravel(), loc.ravel())
    return load


def vector_boundary_load(space_v: VectorSpace, fun, faces=None, rule=None):
    """Full-length load of <g, w>_Gamma for vector data g(P) -> (n, 3)."""
    space_s = space_v.scalar
    mesh = space_s.mesh
    if faces is None:
        faces = np.arange(mesh.n_boundary_faces)
    faces = np.asarray(faces, dtype=int)
    if rule is None:
        rule = triangle_rule(2 * space_s.degree + 2)
    phi2 = space_s.face_basis.tabulate(rule.points)
    pts, areas = _face_quad_points(mesh, faces, rule)
    g = np.asarray(fun(pts.reshape(-1, 3))).reshape(pts.shape)
    loc = 2.0 * areas[:, None, None] * np.einsum(
        "q,fqc,qn->fnc", rule.weights, g, phi2
    )
    load = np.zeros(space_v.n_dofs)
    vdofs = (
        3 * space_s.face_dofs[faces][:, :, None] + np.arange(3)[None, None, :]
    )
    np.add.at(load, vdofs.ravel(), loc.ravel())
    return load


# ---------------------------------------------------------------------------
# projections, grounding, error norms


def project_L2_weighted(space, target, rho, quad=None, mass_solve=None):
    """Weighted L2 projection onto the space.

    Solves (rho c, w) = (rho target, w) for all test functions w. For a
    vector space the projection respects the Dirichlet constraints (the
    constrained dofs stay zero). ``mass_solve`` may supply a cached
    factorization of the weighted mass matrix on the free dofs.
    """
    if isinstance(space, VectorSpace):
        space_s = space.scalar
        k = space_s.degree
        if quad is None:
            quad = tetrahedron_rule(2 * k + 2)
        weighted = lambda P: np.asarray(target(P)) * np.asarray(rho(P))[:, None]
        load = vector_volume_load(space, weighted, quad)[space.free]
        if mass_solve is None:
            M = _weighted_vector_mass(space, rho, quad)
            mass_solve = spla.factorized(M.tocsc())
        return mass_solve(load)
    space_s = space
    if quad is None:
        quad = tetrahedron_rule(2 * space_s.degree + 2)
    weighted = lambda P: np.asarray(target(P)) * np.asarray(rho(P))
    load = scalar_volume_load(space_s, weighted, quad)
    if mass_solve is None:
        M = _weighted_scalar_mass(space_s, rho, quad)
        mass_solve = spla.factorized(M.tocsc())
    return mass_solve(load)


def _weighted_scalar_mass(space_s, rho, quad):
    mesh = space_s.mesh
    phi = space_s.basis.tabulate(quad.points)
    v0, A, det = _element_geometry(mesh)
    ns = space_s.n_dofs
    rows, cols, vals = [], [], []
    for start in range(0, mesh.n_tets, _CHUNK):
        sl = slice(start, min(start + _CHUNK, mesh.n_tets))
        pts = v0[sl][:, None, :] + np.einsum("eij,qj->eqi", A[sl], quad.points)
        r = np.asarray(rho(pts.reshape(-1, 3))).reshape(pts.shape[:2])
        wdet = quad.weights[None, :] * det[sl][:, None]
        loc = np.einsum("eq,qi,qj->eij", wdet * r, phi, phi)
        sd = space_s.elem_dofs[sl]
        rows.append(np.broadcast_to(sd[:, :, None], loc.shape).ravel())
        cols.append(np.broadcast_to(sd[:, None, :], loc.shape).ravel())
        vals.append(loc.ravel())
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ns, ns),
    ).tocsr()


def _weighted_vector_mass(space_v, rho, quad):
    Ms = _weighted_scalar_mass(space_v.scalar, rho, quad)
    M = sp.kron(Ms, sp.identity(3), format="csr")
    return M[space_v.free][:, space_v.free].tocsr()


def apply_grounding(ground, psi):
    """Shift the constant mode so that ground . psi = 0."""
    total = ground.sum()
    if total == 0.0:
        raise ValueError("grounding functional vanishes on constants")
    return psi - (ground @ psi) / total


def fe_errors_scalar(space_s, coeffs, exact, exact_grad, quad=None):
    """(L2 norm, H1 seminorm) of the error against closed-form fields."""
    mesh = space_s.mesh
    if quad is None:
        quad = tetrahedron_rule(2 * space_s.degree + 2)
    phi = space_s.basis.tabulate(quad.points)
    gref = space_s.basis.tabulate_grad(quad.points)
    v0, A, det = _element_geometry(mesh)
    invA = np.linalg.inv(A)
    l2 = h1 = 0.0
    for start in range(0, mesh.n_tets, _CHUNK):
        sl = slice(start, min(start + _CHUNK, mesh.n_tets))
        pts = v0[sl][:, None, :] + np.einsum("eij,qj->eqi", A[sl], quad.points)
        flat = pts.reshape(-1, 3)
        loc = coeffs[space_s.elem_dofs[sl]]
        vals = np.einsum("qn,en->eq", phi, loc)
        gphys = np.einsum("eji,qnj->eqni", invA[sl], gref)
        grads = np.einsum("eqni,en->eqi", gphys, loc)
        ev = vals - np.asarray(exact(flat)).reshape(vals.shape)
        eg = grads - np.asarray(exact_grad(flat)).reshape(grads.shape)
        wdet = quad.weights[None, :] * det[sl][:, None]
        l2 += float(np.einsum("eq,eq->", wdet, ev**2))
        h1 += float(np.einsum("eq,eqi->", wdet, eg**2))
    return np.sqrt(l2), np.sqrt(h1)


def fe_errors_vector(space_v, coeffs_full, exact, exact_grad, quad=None):
    """(L2 norm, H1 seminorm) of a vector-valued error.

    ``exact(P) -> (n, 3)`` and ``exact_grad(P) -> (n, 3, 3)`` with
    grad[i, j] = d u_i / d x_j.
    """
    space_s = space_v.scalar
    mesh = space_s.mesh
    if quad is None:
        quad = tetrahedron_rule(2 * space_s.degree + 2)
    phi = space_s.basis.tabulate(quad.points)
    gref = space_s.basis.tabulate_grad(quad.points)
    v0, A, det = _element_geometry(mesh)
    invA = np.linalg.inv(A)
    l2 = h1 = 0.0
    for start in range(0, mesh.n_tets, _CHUNK):
        sl = slice(start, min(start + _CHUNK, mesh.n_tets))
        pts = v0[sl][:, None, :] + np.einsum("eij,qj->eqi", A[sl], quad.points)
        flat = pts.reshape(-1, 3)
        sd = space_s.elem_dofs[sl]
        loc = coeffs_full[(3 * sd[:, :, None] + np.arange(3)).reshape(sd.shape[0], -1)]
        loc = loc.reshape(sd.shape[0], sd.shape[1], 3)
        vals = np.einsum("qn,enc->eqc", phi, loc)
        gphys = np.einsum("eji,qnj->eqni", invA[sl], gref)
        grads = np.einsum("eqnj,enc->eqcj", gphys, loc)
        ev = vals - np.asarray(exact(flat)).reshape(vals.shape)
        eg = grads - np.asarray(exact_grad(flat)).reshape(grads.shape)
        wdet = quad.weights[None, :] * det[sl][:, None]
        l2 += float(np.einsum("eq,eqc->", wdet, ev**2))
        h1 += float(np.einsum("eq,eqcj->", wdet, eg**2))
    return np.sqrt(l2), np.sqrt(h1)
