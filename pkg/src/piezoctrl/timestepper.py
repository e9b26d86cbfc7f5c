"""Crank-Nicolson integration of the coupled state and adjoint systems.

The second-order-in-time system is reduced to first order in the
displacement u and velocity v, while the potential is recovered at every
time node from the grounded elliptic relation

    k_pp psi (+ multiplier) = k_pu u - bmap z + boundary/volume data.

One implicit step on a uniform grid solves the sparse block system

    [ M + dt^2/4 K_uu   dt/2 K_up   0 ] [ v_n ]
    [ -dt/2 K_pu        K_pp        g ] [ psi_n ] = rhs,
    [ 0                 g^T         0 ] [ mult ]

whose matrix is constant in time, so it is factorized once per time-step
size and reused for every step and for the adjoint sweep. Time-dependent
right-hand sides enter as the average of their nodal values over each
step, matching the trapezoidal quadrature of the scheme; the control
itself only appears through its nodal values in the elliptic relation.

The adjoint system has the same operator with final-time data, so it is
integrated as a forward sweep over the reversed data series and flipped
back, which reproduces the backward scheme exactly.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .control import ControlTrajectory, ZMetric, pair_beta
from .fespace import (
    DiscreteOperators,
    project_L2_weighted,
    scalar_boundary_load,
    scalar_volume_load,
    vector_boundary_load,
    vector_volume_load,
)
from .quadrature import tetrahedron_rule, triangle_rule

_GROUND_TOL = 1e-9


class SolveError(Exception):
    """Raised when a time-step solve fails or loses the grounding."""


@dataclass(frozen=True)
class Sources:
    """Optional inhomogeneous data for the state system.

    Volume closures map (points, t) to values; boundary closures get the
    outward unit normals as a third argument. When Dirichlet data is
    supplied its first and second time derivatives are required as well,
    since the lifting moves them to the right-hand side.
    """

    body_force: Optional[Callable] = None
    charge: Optional[Callable] = None
    dirichlet: Optional[Callable] = None
    dirichlet_t: Optional[Callable] = None
    dirichlet_tt: Optional[Callable] = None
    traction: Optional[Callable] = None
    flux: Optional[Callable] = None

    def __post_init__(self):
        if self.dirichlet is not None and (
            self.dirichlet_t is None or self.dirichlet_tt is None
        ):
            raise ValueError(
                "Dirichlet data needs its first and second time derivatives"
            )


@dataclass(frozen=True)
class StateTrajectory:
    """Nodal coefficient series (u_n, v_n, psi_n) of a forward solve.

    u and v are full-length vectors (Dirichlet values filled in), psi is
    grounded at every node.
    """

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    ops: DiscreteOperators

    @property
    def n_steps(self):
        return self.times.size - 1

    def u_free(self):
        return self.u[:, self.ops.space_v.free]

    def v_free(self):
        return self.v[:, self.ops.space_v.free]


@dataclass(frozen=True)
class AdjointTrajectory:
    """Backward solution (p_n, q_n, xi_n) and its boundary trace data.

    ``beta`` holds the per-face integrals of the trace of xi_n, which is
    all the gradient computation consumes.
    """

    times: np.ndarray
    p: np.ndarray
    q: np.ndarray
    xi: np.ndarray
    beta: np.ndarray
    ops: DiscreteOperators


def _step_solver(ops: DiscreteOperators, dt: float):
    key = ("cn_step", round(dt, 15))
    if key not in ops._cache:
        g = sp.csr_matrix(ops.ground[None, :])
        nf, ns = ops.n_free, ops.n_psi
        zero_fp = sp.csr_matrix((nf, 1))
        K = sp.bmat(
            [
                [ops.mass + 0.25 * dt * dt * ops.k_uu, 0.5 * dt * ops.k_up, zero_fp],
                [-0.5 * dt * ops.k_pu, ops.k_pp, g.T],
                [zero_fp.T, g, None],
            ],
            format="csc",
        )
        try:
            ops._cache[key] = spla.factorized(K)
        except RuntimeError as exc:
            raise SolveError(f"singular time-step matrix: {exc}") from exc
    return ops._cache[key]


def _check_grounded(ops, psi):
    res = abs(ops.ground @ psi)
    if res > _GROUND_TOL * (1.0 + np.linalg.norm(psi)):
        raise SolveError(f"potential lost the grounding: residual {res:g}")


def _cn_sweep(ops, dt, n_steps, fu, cp, u0, v0):
    """Forward Crank-Nicolson sweep of the reduced first-order system.

    fu[n] is the momentum load at node n on the free dofs, cp[n] the
    data part of the elliptic relation. Returns free-dof series.
    """
    solve = _step_solver(ops, dt)
    nf, ns = ops.n_free, ops.n_psi
    u = np.zeros((n_steps + 1, nf))
    v = np.zeros((n_steps + 1, nf))
    psi = np.zeros((n_steps + 1, ns))
    u[0], v[0] = u0, v0
    psi[0], _ = ops.solve_potential(ops.k_pu @ u0 + cp[0])

    for n in range(1, n_steps + 1):
        rhs_u = (
            ops.mass @ v[n - 1]
            - 0.25 * dt * dt * (ops.k_uu @ v[n - 1])
            - dt * (ops.k_uu @ u[n - 1])
            - 0.5 * dt * (ops.k_up @ psi[n - 1])
            + 0.5 * dt * (fu[n - 1] + fu[n])
        )
        rhs_p = ops.k_pu @ (u[n - 1] + 0.5 * dt * v[n - 1]) + cp[n]
        sol = solve(np.concatenate([rhs_u, rhs_p, [0.0]]))
        v[n] = sol[:nf]
        psi[n] = sol[nf : nf + ns]
        u[n] = u[n - 1] + 0.5 * dt * (v[n - 1] + v[n])
        _check_grounded(ops, psi[n])
    return u, v, psi


def _control_values(control, n_steps, n_faces):
    if control is None:
        return np.zeros((n_steps + 1, n_faces))
    if control.values.shape != (n_steps + 1, n_faces):
        raise SolveError(
            f"control grid {control.values.shape} does not match the solve "
            f"({n_steps + 1}, {n_faces})"
        )
    return control.values


def _assemble_node_data(ops, sources, times, z_values):
    """Momentum loads fu[n] and elliptic data cp[n] at every node."""
    sv, ss = ops.space_v, ops.space_s
    mesh = ss.mesh
    n_nodes = times.size
    fu = np.zeros((n_nodes, ops.n_free))
    cp = np.zeros((n_nodes, ops.n_psi))
    uc = np.zeros((n_nodes, ops.space_v.constrained.size))
    vc = np.zeros_like(uc)

    cp -= (ops.bmap @ z_values.T).T

    if sources is None:
        return fu, cp, uc, vc

    vol_rule = tetrahedron_rule(2 * ss.degree + 2)
    srf_rule = triangle_rule(2 * ss.degree + 2)
    neumann = np.array(
        [
            f
            for f in range(mesh.n_boundary_faces)
            if int(mesh.face_tags[f]) in mesh.neumann_tags
        ],
        dtype=int,
    )
    normals = mesh.face_normals()
    con_coords = ss.dof_coords[ops.space_v.constrained // 3]
    con_comp = ops.space_v.constrained % 3

    for n, t in enumerate(times):
        if sources.body_force is not None:
            fu[n] += vector_volume_load(
                sv, lambda P: sources.body_force(P, t), vol_rule
            )[sv.free]
        if sources.traction is not None and neumann.size:
            fu[n] += _normal_boundary_load_vector(
                sv, sources.traction, t, neumann, normals, srf_rule
            )[sv.free]
        if sources.charge is not None:
            cp[n] -= scalar_volume_load(ss, lambda P: sources.charge(P, t), vol_rule)
        if sources.flux is not None:
            cp[n] -= _normal_boundary_load_scalar(
                ss, sources.flux, t, np.arange(mesh.n_boundary_faces), normals, srf_rule
            )
        if sources.dirichlet is not None:
            gvals = np.asarray(sources.dirichlet(con_coords, t))
            uc[n] = gvals[np.arange(len(con_comp)), con_comp]
            gtvals = np.asarray(sources.dirichlet_t(con_coords, t))
            vc[n] = gtvals[np.arange(len(con_comp)), con_comp]
            gttvals = np.asarray(sources.dirichlet_tt(con_coords, t))
            att = gttvals[np.arange(len(con_comp)), con_comp]
            fu[n] -= ops.k_uu_dc @ uc[n] + ops.mass_dc @ att
            cp[n] += ops.k_pu_dc @ uc[n]
    return fu, cp, uc, vc


def _normal_boundary_load_vector(sv, fun, t, faces, normals, rule):
    def per_face(P):
        nrm = np.repeat(normals[faces], len(rule), axis=0)
        return fun(P, t, nrm)

    return vector_boundary_load(sv, per_face, faces=faces, rule=rule)


def _normal_boundary_load_scalar(ss, fun, t, faces, normals, rule):
    def per_face(P):
        nrm = np.repeat(normals[faces], len(rule), axis=0)
        return fun(P, t, nrm)

    return scalar_boundary_load(ss, per_face, faces=faces, rule=rule)


def solve_state(
    ops: DiscreteOperators,
    control: Optional[ControlTrajectory] = None,
    sources: Optional[Sources] = None,
    n_steps: int = 1,
    t_final: float = 1.0,
    initial_u=None,
    initial_v=None,
) -> StateTrajectory:
    """Integrate the state system forward from rest.

    ``initial_u`` and ``initial_v`` (free-dof vectors) exist for
    conservation experiments only; the control problem always starts
    from zero.
    """
    if n_steps < 1:
        raise ValueError(f"need at least one time step, got {n_steps}")
    dt = t_final / n_steps
    times = dt * np.arange(n_steps + 1)
    z_values = _control_values(control, n_steps, ops.n_faces)
    fu, cp, uc, vc = _assemble_node_data(ops, sources, times, z_values)

    u0 = np.zeros(ops.n_free) if initial_u is None else np.asarray(initial_u)
    v0 = np.zeros(ops.n_free) if initial_v is None else np.asarray(initial_v)
    uf, vf, psi = _cn_sweep(ops, dt, n_steps, fu, cp, u0, v0)

    sv = ops.space_v
    u = np.zeros((n_steps + 1, sv.n_dofs))
    v = np.zeros_like(u)
    u[:, sv.free] = uf
    v[:, sv.free] = vf
    if sv.constrained.size:
        u[:, sv.constrained] = uc
        v[:, sv.constrained] = vc
    return StateTrajectory(times=times, u=u, v=v, psi=psi, ops=ops)


def solve_adjoint(
    ops: DiscreteOperators,
    misfit,
    n_steps: int,
    t_final: float,
) -> AdjointTrajectory:
    """Integrate the adjoint system backward from rest at the final time.

    ``misfit`` holds the free-dof coefficients of u_n - u_n^d at every
    node; it enters the momentum equation as a weighted L2 load. The
    data series is reversed, swept forward with the state scheme, and
    flipped back, which is exactly the backward scheme of the same
    operator.
    """
    misfit = np.asarray(misfit, dtype=float)
    if misfit.shape != (n_steps + 1, ops.n_free):
        raise SolveError(
            f"misfit series {misfit.shape} does not match ({n_steps + 1}, {ops.n_free})"
        )
    dt = t_final / n_steps
    fu = (ops.mass @ misfit[::-1].T).T
    cp = np.zeros((n_steps + 1, ops.n_psi))
    uf, vf, psi = _cn_sweep(
        ops, dt, n_steps, fu, cp, np.zeros(ops.n_free), np.zeros(ops.n_free)
    )
    p = uf[::-1].copy()
    q = -vf[::-1].copy()
    xi = psi[::-1].copy()
    beta = xi @ ops.bmap.toarray() if ops.n_faces < 20000 else (ops.bmap.T @ xi.T).T
    times = dt * np.arange(n_steps + 1)
    return AdjointTrajectory(times=times, p=p, q=q, xi=xi, beta=beta, ops=ops)


def energy(ops: DiscreteOperators, u, v, psi) -> float:
    """Quadratic invariant 1/2 (v M v + u K_uu u + psi K_pp psi)."""
    return 0.5 * (
        float(v @ (ops.mass @ v))
        + float(u @ (ops.k_uu @ u))
        + float(psi @ (ops.k_pp @ psi))
    )


def trajectory_energies(traj: StateTrajectory) -> np.ndarray:
    uf, vf = traj.u_free(), traj.v_free()
    return np.array(
        [energy(traj.ops, uf[n], vf[n], traj.psi[n]) for n in range(len(traj.times))]
    )


def weighted_norm_series(traj: StateTrajectory) -> np.ndarray:
    """Density-weighted L2 norm of the displacement at every node."""
    uf = traj.u_free()
    return np.sqrt(np.einsum("nf,nf->n", uf, (traj.ops.mass @ uf.T).T))


def control_metric(ops: DiscreteOperators, n_steps: int, t_final: float) -> ZMetric:
    """Control-space metric induced by the boundary faces and time grid."""
    return ZMetric(
        face_areas=ops.face_areas, dt=t_final / n_steps, n_steps=n_steps
    )


def transposition_gap(
    ops: DiscreteOperators,
    f_fun,
    y: ControlTrajectory,
    n_steps: int,
    t_final: float,
) -> float:
    """Normalized defect of the forward/adjoint duality pairing.

    Compares the time integral of (f, S y)_rho, evaluated by the
    trapezoidal rule on the nodal values, with the exact pairing of the
    interpolated adjoint trace against y. Both sides are second-order
    accurate in the time step, so the gap shrinks like dt^2.
    """
    dt = t_final / n_steps
    times = dt * np.arange(n_steps + 1)
    mass_solve = ops.mass_solver()
    quad = tetrahedron_rule(2 * ops.space_s.degree + 2)
    f_series = np.stack(
        [
            project_L2_weighted(
                ops.space_v,
                lambda P, t=t: f_fun(P, t),
                ops.materials.rho,
                quad=quad,
                mass_solve=mass_solve,
            )
            for t in times
        ]
    )
    traj = solve_state(ops, control=y, n_steps=n_steps, t_final=t_final)
    pair = np.einsum("nf,nf->n", f_series, (ops.mass @ traj.u_free().T).T)
    lhs = dt * (pair.sum() - 0.5 * (pair[0] + pair[-1]))

    adj = solve_adjoint(ops, f_series, n_steps, t_final)
    rhs = pair_beta(adj.beta, y)
    scale = abs(lhs) + abs(rhs)
    return abs(lhs - rhs) / scale if scale > 0 else 0.0
