"""Experiment runner: convergence studies, control studies, simulation.

Each experiment consumes a flat RunConfig, writes CSV tables, SVG charts
and VTK snapshots under its output directory, and returns its results as
plain data so the test suite can assert on them. All runs are
deterministic for a fixed config: meshes, dof numbering and assembly
order are fixed, and the only random numbers (verification probes) use
seeded generators. Sweep levels are independent and could run in
separate processes, each writing to its own subdirectory.
"""

import json
import os
from dataclasses import dataclass, fields

import numpy as np

from . import svgplot, vtkio
from .control import ControlTrajectory, ZMetric, project_Q, projection_hessian, z_norm
from .fespace import (
    DiscreteOperators,
    ScalarSpace,
    VectorSpace,
    assemble,
    fe_errors_scalar,
    fe_errors_vector,
)
from .manufactured import (
    ManufacturedCase,
    tracking_desired_state,
    twist_desired_state,
)
from .materials import paper_benchmark_materials
from .mesh import Mesh, build_cube_mesh, cube_side_of_faces, read_mesh
from .optimizer import build_reduced_problem, misfit_term, optimize
from .quadrature import tetrahedron_rule, triangle_rule
from .timestepper import (
    control_metric,
    solve_state,
    trajectory_energies,
    transposition_gap,
    weighted_norm_series,
)


class ConfigError(Exception):
    """Raised for unknown keys or malformed values in a run config."""


@dataclass(frozen=True)
class RunConfig:
    """Flat experiment configuration; file keys mirror the field names."""

    experiment: str = ""
    mesh_m: int = 2
    mesh_file: str = ""
    mesh_tag_map: str = ""
    mesh_levels: tuple = ()
    degree: int = 2
    n0_steps: int = 8
    steps: int = 0
    t_final: float = 1.0
    alpha: float = 1e-4
    z_min: float = -1e6
    z_max: float = 1e6
    material: str = "paper_benchmark"
    dirichlet: str = ""
    outdir: str = "piezoctrl_out"
    tol: float = 1e-6
    max_iters: int = 50
    full_scale: bool = False
    resolve_degree: int = 3
    fault_injection: bool = False

    def __post_init__(self):
        if self.t_final <= 0.0:
            raise ConfigError(f"final time must be positive, got {self.t_final}")

    @property
    def bounds(self):
        return (self.z_min, self.z_max)

    def levels(self, default):
        return tuple(self.mesh_levels) if self.mesh_levels else tuple(default)

    def n_steps_for(self, m):
        """Refinement rule: N = M * N0 keeps dt proportional to h."""
        return m * self.n0_steps


_BOOL_KEYS = {"full_scale", "fault_injection"}


def parse_config_file(path) -> dict:
    """Read the flat "key = value" format, '#' starts a comment."""
    overrides = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            overrides[key] = val
    return overrides


def make_config(overrides: dict) -> RunConfig:
    """Build a RunConfig from string-valued overrides, with validation."""
    kwargs = {}
    types = {f.name: f.type for f in fields(RunConfig)}
    for key, val in overrides.items():
        if key not in types:
            raise ConfigError(f"unknown config key: {key}")
        if isinstance(val, str):
            try:
                if key == "mesh_levels":
                    kwargs[key] = tuple(int(s) for s in val.split(",") if s.strip())
                elif key in _BOOL_KEYS:
                    kwargs[key] = val.lower() in ("1", "true", "yes", "on")
                elif types[key] in (int, "int"):
                    kwargs[key] = int(val)
                elif types[key] in (float, "float"):
                    kwargs[key] = float(val)
                else:
                    kwargs[key] = val
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        else:
            kwargs[key] = val
    return RunConfig(**kwargs)


# ---------------------------------------------------------------------------
# problem setup helpers


DIRICHLET_RULES = {
    # triangles whose centroid touches a coordinate plane
    "xyz0": lambda c: c[0] * c[1] * c[2] < 1e-12,
    "yfaces": lambda c: c[1] < 1e-12 or c[1] > 1.0 - 1e-12,
    "bottom": lambda c: c[2] < 1e-12,
    "none": lambda c: False,
    "all": lambda c: True,
}


def build_mesh(cfg: RunConfig, m=None, rule=None) -> Mesh:
    if cfg.mesh_file:
        tag_map = {}
        for item in cfg.mesh_tag_map.split(","):
            if not item.strip():
                continue
            tag, kind = item.split(":")
            tag_map[int(tag)] = kind.strip().upper()
        d_tags = [t for t, k in tag_map.items() if k == "D"]
        n_tags = [t for t, k in tag_map.items() if k == "N"]
        return read_mesh(cfg.mesh_file, d_tags, n_tags)
    rule_name = rule or cfg.dirichlet or "none"
    if rule_name not in DIRICHLET_RULES:
        raise ConfigError(f"unknown Dirichlet rule: {rule_name}")
    return build_cube_mesh(m or cfg.mesh_m, DIRICHLET_RULES[rule_name])


def build_operators(mesh: Mesh, degree: int, material="paper_benchmark",
                    coupling_perturbation=0.0) -> DiscreteOperators:
    if material != "paper_benchmark":
        raise ConfigError(f"unknown material preset: {material}")
    space_s = ScalarSpace(mesh, degree)
    space_v = VectorSpace(space_s)
    return assemble(
        space_v,
        space_s,
        paper_benchmark_materials(),
        coupling_perturbation=coupling_perturbation,
    )


def _outdir(cfg, *parts):
    path = os.path.join(cfg.outdir, *parts)
    os.makedirs(path, exist_ok=True)
    return path


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v):
    if isinstance(v, float):
        return f"{v:.16e}"
    return str(v)


# ---------------------------------------------------------------------------
# space-time convergence of the state solver


def run_convergence_study(cfg: RunConfig) -> dict:
    """Errors of the state solver against the closed-form benchmark.

    Sweeps the mesh levels with N = M * N0 time steps, measures L2 and
    H1 errors of displacement and potential at the final time, and
    reports observed orders between consecutive levels.
    """
    case = ManufacturedCase()
    levels = cfg.levels((1, 2, 3, 4))
    out = _outdir(cfg, "convergence")
    rows = []
    for m in levels:
        mesh = build_cube_mesh(m, DIRICHLET_RULES["xyz0"])
        ops = build_operators(mesh, cfg.degree, cfg.material)
        n_steps = cfg.n_steps_for(m)
        traj = solve_state(
            ops,
            sources=case.sources(),
            n_steps=n_steps,
            t_final=cfg.t_final,
        )
        T = cfg.t_final
        ul2, uh1 = fe_errors_vector(
            ops.space_v,
            traj.u[-1],
            lambda P: case.exact_u(P, T),
            lambda P: case.exact_grad_u(P, T),
        )
        pl2, ph1 = fe_errors_scalar(
            ops.space_s,
            traj.psi[-1],
            lambda P: case.exact_psi(P, T),
            lambda P: case.exact_grad_psi(P, T),
        )
        rows.append((m, 1.0 / m, ul2, uh1, pl2, ph1))

    rates = _observed_rates(rows)
    _write_csv(
        os.path.join(out, "errors.csv"),
        ["M", "h", "u_l2", "u_h1", "psi_l2", "psi_h1"],
        rows,
    )
    _write_csv(
        os.path.join(out, "rates.csv"),
        ["h_pair", "u_l2", "u_h1", "psi_l2", "psi_h1"],
        [
            (f"1/{rows[i][0]}->1/{rows[i + 1][0]}",) + tuple(rates[i])
            for i in range(len(rates))
        ],
    )
    hs = [r[1] for r in rows]
    svgplot.write_line_chart(
        os.path.join(out, "errors.svg"),
        [
            ("u L2", hs, [r[2] for r in rows]),
            ("u H1", hs, [r[3] for r in rows]),
            ("psi L2", hs, [r[4] for r in rows]),
            ("psi H1", hs, [r[5] for r in rows]),
        ],
        title="state solver convergence",
        xlabel="h",
        ylabel="error at final time",
        logx=True,
        logy=True,
    )
    return {"rows": rows, "rates": rates}


def _observed_rates(rows):
    rates = []
    for a, b in zip(rows[:-1], rows[1:]):
        ratio = np.log(float(b[0]) / float(a[0]))
        rates.append(tuple(np.log(a[i] / b[i]) / ratio for i in range(2, 6)))
    return rates


# ---------------------------------------------------------------------------
# convergence of the computed optimal control


def side_integrals(mesh: Mesh, z: ControlTrajectory) -> np.ndarray:
    """Control integrated over each cube side, shape (N+1, 6)."""
    side = cube_side_of_faces(mesh)
    areas = mesh.face_areas()
    out = np.zeros((z.values.shape[0], 6))
    for s in range(6):
        sel = side == s
        out[:, s] = z.values[:, sel] @ areas[sel]
    return out


def write_control_csv(z: ControlTrajectory, path):
    dt = z.metric.dt
    rows = []
    for n in range(z.values.shape[0]):
        for f in range(z.metric.n_faces):
            rows.append((n, n * dt, f, z.values[n, f]))
    _write_csv(path, ["n", "t_n", "face_id", "value"], rows)


def run_control_study(cfg: RunConfig) -> dict:
    """Optimize the tracking problem on a mesh sweep and compare levels.

    The desired state pulls every displacement component toward
    t^2 y (y-1)(x+y+z) with the y-faces clamped. Reports iteration
    counts, the control norm and functional per level, relative gaps
    against the finest level, and the control integrated over each cube
    side as a time series.
    """
    levels = cfg.levels((1, 2, 3, 4))
    out = _outdir(cfg, "control")
    results = []
    for m in levels:
        mesh = build_cube_mesh(m, DIRICHLET_RULES[cfg.dirichlet or "yfaces"])
        ops = build_operators(mesh, cfg.degree, cfg.material)
        n_steps = cfg.n_steps_for(m)
        problem = build_reduced_problem(
            ops,
            tracking_desired_state,
            cfg.alpha,
            n_steps,
            cfg.t_final,
            bounds=cfg.bounds,
        )
        z_opt, report = optimize(
            problem, tol=cfg.tol, max_iters=cfg.max_iters
        )
        zeta = z_norm(z_opt) ** 2
        j_final = report.j_values[-1]
        sides = side_integrals(mesh, z_opt)
        results.append(
            {
                "M": m,
                "h": 1.0 / m,
                "iterations": report.iterations,
                "zeta": zeta,
                "j_fd": j_final,
                "sides": sides,
                "times": cfg.t_final / n_steps * np.arange(n_steps + 1),
                "control": z_opt,
                "report": report,
            }
        )
        report.write_csv(os.path.join(out, f"trace_M{m}.csv"))
        write_control_csv(z_opt, os.path.join(out, f"control_M{m}.csv"))
        _write_csv(
            os.path.join(out, f"side_integrals_M{m}.csv"),
            ["t_n", "side", "integral"],
            [
                (t, s, sides[n, s])
                for n, t in enumerate(results[-1]["times"])
                for s in range(6)
            ],
        )

    ref = results[-1]
    eps_rows = []
    for res in results[:-1]:
        eps_z = abs(res["zeta"] - ref["zeta"]) / abs(ref["zeta"])
        eps_j = abs(res["j_fd"] - ref["j_fd"]) / abs(ref["j_fd"])
        eps_rows.append((res["h"], eps_z, eps_j))
    _write_csv(
        os.path.join(out, "eps.csv"), ["h", "eps_z", "eps_j"], eps_rows
    )
    _write_csv(
        os.path.join(out, "iterations.csv"),
        ["M", "h", "iterations", "zeta", "j_fd"],
        [(r["M"], r["h"], r["iterations"], r["zeta"], r["j_fd"]) for r in results],
    )
    if eps_rows:
        svgplot.write_line_chart(
            os.path.join(out, "eps.svg"),
            [
                ("eps_z", [r[0] for r in eps_rows], [r[1] for r in eps_rows]),
                ("eps_j", [r[0] for r in eps_rows], [r[2] for r in eps_rows]),
            ],
            title="relative gap to finest level",
            xlabel="h",
            ylabel="relative gap",
            logx=True,
            logy=True,
        )
    for s, name in enumerate(("x0", "x1", "y0", "y1", "z0", "z1")):
        svgplot.write_line_chart(
            os.path.join(out, f"side_{name}.svg"),
            [
                (f"h=1/{r['M']}", r["times"], r["sides"][:, s])
                for r in results
            ],
            title=f"control integral over side {name}",
            xlabel="t",
            ylabel="integral",
        )

    gaps = side_curve_gaps(results)
    _write_csv(
        os.path.join(out, "side_gaps.csv"),
        ["pair", "sup_gap"],
        [(f"1/{levels[i]}->1/{levels[i + 1]}", g) for i, g in enumerate(gaps)],
    )
    return {"results": results, "eps": eps_rows, "side_gaps": gaps}


def side_curve_gaps(results):
    """Sup-norm gaps of the side-integral curves between refinements.

    Curves on different time grids are compared through their piecewise
    linear interpolants on the finer grid.
    """
    gaps = []
    for a, b in zip(results[:-1], results[1:]):
        worst = 0.0
        for s in range(6):
            interp = np.interp(b["times"], a["times"], a["sides"][:, s])
            worst = max(worst, float(np.abs(interp - b["sides"][:, s]).max()))
        gaps.append(worst)
    return gaps


# ---------------------------------------------------------------------------
# twist simulation


def run_simulation(cfg: RunConfig) -> dict:
    """Drive the cube toward the twisting desired state.

    Computes the optimal control on the configured mesh, re-solves the
    state with the higher-degree space using that control as flux data,
    and writes paired snapshots of the computed and desired displacement
    plus the control painted on the boundary faces.
    """
    if cfg.full_scale:
        m, n_steps, t_final = 4, 401, 401 * 0.0125
    else:
        m = cfg.mesh_m
        n_steps = cfg.steps or 80
        t_final = cfg.t_final if cfg.t_final != 1.0 else 5.0
    out = _outdir(cfg, "simulation")

    mesh = build_cube_mesh(m, DIRICHLET_RULES[cfg.dirichlet or "bottom"])
    ops = build_operators(mesh, cfg.degree, cfg.material)
    problem = build_reduced_problem(
        ops, twist_desired_state, cfg.alpha, n_steps, t_final, bounds=cfg.bounds
    )
    z_opt, report = optimize(problem, tol=cfg.tol, max_iters=cfg.max_iters)
    report.write_csv(os.path.join(out, "trace.csv"))
    write_control_csv(z_opt, os.path.join(out, "control.csv"))

    # re-solve with the optimal flux on the richer space
    ops_re = build_operators(mesh, cfg.resolve_degree, cfg.material)
    problem_re = build_reduced_problem(
        ops_re, twist_desired_state, cfg.alpha, n_steps, t_final, bounds=cfg.bounds
    )
    metric_re = control_metric(ops_re, n_steps, t_final)
    z_re = ControlTrajectory(metric_re, z_opt.values)
    traj = solve_state(ops_re, control=z_re, n_steps=n_steps, t_final=t_final)

    misfit_opt = np.sqrt(2.0 * misfit_term(problem_re, traj.u_free()))
    traj_zero = solve_state(ops_re, n_steps=n_steps, t_final=t_final)
    misfit_zero = np.sqrt(2.0 * misfit_term(problem_re, traj_zero.u_free()))

    energies = trajectory_energies(traj)
    norms = weighted_norm_series(traj)
    _write_csv(
        os.path.join(out, "trajectory.csv"),
        ["t_n", "energy", "u_norm_rho"],
        list(zip(traj.times, energies, norms)),
    )

    snapshot_ids = sorted(set(np.linspace(0, n_steps, 9, dtype=int)))
    vtk_files = []
    for n in snapshot_ids:
        t = traj.times[n]
        u_vert = vtkio.vertex_values_vector(ops_re.space_v, traj.u[n], mesh)
        ud_vert = twist_desired_state(mesh.vertices, t)
        psi_vert = vtkio.vertex_values_scalar(ops_re.space_s, traj.psi[n], mesh)
        vol = os.path.join(out, f"state_{n:04d}.vtk")
        vtkio.write_volume_snapshot(
            vol,
            mesh,
            point_vectors={"displacement": u_vert, "desired_displacement": ud_vert},
            point_scalars={"potential": psi_vert},
            title=f"twist simulation t={t:.4f}",
        )
        srf = os.path.join(out, f"control_{n:04d}.vtk")
        vtkio.write_boundary_snapshot(
            srf, mesh, {"control": z_opt.values[n]}, title=f"control t={t:.4f}"
        )
        vtk_files.extend([vol, srf])

    summary = {
        "iterations": report.iterations,
        "j_fd": report.j_values[-1],
        "misfit_optimal": misfit_opt,
        "misfit_zero_control": misfit_zero,
        "vtk_files": vtk_files,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def export_trajectory(traj, outdir, basename="state", every=1):
    """Write per-step VTK snapshots and the (t, energy, norm) CSV."""
    os.makedirs(outdir, exist_ok=True)
    mesh = traj.ops.space_s.mesh
    files = []
    for n in range(0, traj.times.size, every):
        u_vert = vtkio.vertex_values_vector(traj.ops.space_v, traj.u[n], mesh)
        psi_vert = vtkio.vertex_values_scalar(traj.ops.space_s, traj.psi[n], mesh)
        path = os.path.join(outdir, f"{basename}_{n:04d}.vtk")
        vtkio.write_volume_snapshot(
            path,
            mesh,
            point_vectors={"displacement": u_vert},
            point_scalars={"potential": psi_vert},
            title=f"{basename} t={traj.times[n]:.6g}",
        )
        files.append(path)
    _write_csv(
        os.path.join(outdir, f"{basename}_series.csv"),
        ["t_n", "energy", "u_norm_rho"],
        list(
            zip(
                traj.times,
                trajectory_energies(traj),
                weighted_norm_series(traj),
            )
        ),
    )
    return files


# ---------------------------------------------------------------------------
# verification oracles


def reference_tet_mesh(dirichlet=False) -> Mesh:
    """Single reference tetrahedron with its four faces tagged."""
    verts = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )
    tets = np.array([[0, 1, 2, 3]])
    faces = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    tags = np.array([1, 2, 3, 4])
    d_tags = frozenset({2} if dirichlet else set())
    n_tags = frozenset({1, 2, 3, 4} - d_tags)
    return Mesh(
        vertices=verts,
        tets=tets,
        boundary_faces=faces,
        face_tags=tags,
        dirichlet_tags=d_tags,
        neumann_tags=n_tags,
        face_parent_tet=np.zeros(4, dtype=int),
    ).validate()


def dense_assembly_oracle(space_v, space_s, rho0, lam0, mu0, piezo, kappa):
    """Quadrature-loop assembly on one element with constant coefficients.

    Works directly with the fourth-order elasticity tensor and the full
    three-index coupling tensor, with no Voigt encoding or vectorized
    scatter, as an independent check of the production assembly.
    """
    from .materials import piezo_full_tensor

    mesh = space_s.mesh
    if mesh.n_tets != 1:
        raise ValueError("the dense oracle is meant for one-element meshes")
    k = space_s.degree
    quad = tetrahedron_rule(2 * k + 2)
    basis = space_s.basis
    phi = basis.tabulate(quad.points)
    gref = basis.tabulate_grad(quad.points)
    v = mesh.tet_vertices(0)
    A = np.stack([v[1] - v[0], v[2] - v[0], v[3] - v[0]], axis=1)
    det = np.linalg.det(A)
    invA = np.linalg.inv(A)
    gphys = gref @ invA

    delta = np.eye(3)
    C4 = (
        lam0 * np.einsum("ij,kl->ijkl", delta, delta)
        + mu0 * np.einsum("ik,jl->ijkl", delta, delta)
        + mu0 * np.einsum("il,jk->ijkl", delta, delta)
    )
    efull = piezo_full_tensor(piezo)

    ns = basis.n_basis
    nv = 3 * ns
    M = np.zeros((nv, nv))
    Kuu = np.zeros((nv, nv))
    Kup = np.zeros((nv, ns))
    Kpp = np.zeros((ns, ns))
    ground = np.zeros(ns)
    for q, w in enumerate(quad.weights):
        wd = w * det
        strains = []
        for i in range(ns):
            for a in range(3):
                G = np.zeros((3, 3))
                G[a, :] = gphys[q, i, :]
                strains.append(0.5 * (G + G.T))
        for I in range(nv):
            for J in range(nv):
                Kuu[I, J] += wd * np.einsum(
                    "ij,ijkl,kl->", strains[I], C4, strains[J]
                )
                if I % 3 == J % 3:
                    M[I, J] += wd * rho0 * phi[q, I // 3] * phi[q, J // 3]
            for j in range(ns):
                Epsi = np.einsum("ijk,k->ij", efull, gphys[q, j, :])
                Kup[I, j] += wd * np.einsum("ij,ij->", Epsi, strains[I])
        for i in range(ns):
            ground[i] += wd * phi[q, i]
            for j in range(ns):
                Kpp[i, j] += wd * gphys[q, i, :] @ kappa @ gphys[q, j, :]

    tri = triangle_rule(2 * k + 2)
    phi2 = space_s.face_basis.tabulate(tri.points)
    B = np.zeros((ns, mesh.n_boundary_faces))
    areas = mesh.face_areas()
    for f in range(mesh.n_boundary_faces):
        for m, dof in enumerate(space_s.face_dofs[f]):
            B[dof, f] += 2.0 * areas[f] * float(tri.weights @ phi2[:, m])
    return {"mass": M, "k_uu": Kuu, "k_up": Kup, "k_pp": Kpp, "bmap": B,
            "ground": ground}


def brute_force_projection(metric: ZMetric, z_values, bounds):
    """Global minimizer of the projection problem by active-set enumeration.

    Every variable is tried free, at the lower bound, or at the upper
    bound; each pattern yields an equality-constrained problem solved by
    its KKT system, and the best feasible candidate wins. Exponential in
    N * F, usable only for tiny instances.
    """
    from itertools import product as iproduct

    za, zb = bounds
    N, F = metric.n_steps, metric.n_faces
    n = N * F
    H = projection_hessian(metric).toarray()
    areas = metric.face_areas
    target = np.asarray(z_values)[1:].ravel()

    Ceq = np.kron(np.eye(N), areas[None, :])
    best, best_val = None, np.inf
    for pattern in iproduct((-1, 0, 1), repeat=n):
        pattern = np.array(pattern)
        x = np.where(pattern < 0, za, np.where(pattern > 0, zb, 0.0))
        free = pattern == 0
        nf = int(free.sum())
        rhs_eq = -Ceq[:, ~free] @ x[~free]
        keep = np.abs(Ceq[:, free]).sum(axis=1) > 1e-300
        if np.abs(rhs_eq[~keep]).max(initial=0.0) > 1e-12:
            continue
        if nf:
            Cf = Ceq[keep][:, free]
            Hff = H[np.ix_(free, free)]
            K = np.block(
                [[Hff, Cf.T], [Cf, np.zeros((Cf.shape[0], Cf.shape[0]))]]
            )
            rhs = np.concatenate(
                [(H @ target)[free] - H[np.ix_(free, ~free)] @ x[~free],
                 rhs_eq[keep]]
            )
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x[free] = sol[:nf]
        if np.any(x < za - 1e-11) or np.any(x > zb + 1e-11):
            continue
        if np.abs(Ceq @ x).max() > 1e-10 * (1.0 + np.abs(x).max()):
            continue
        val = float((x - target) @ H @ (x - target))
        if val < best_val - 1e-14:
            best_val, best = val, x
    if best is None:
        raise RuntimeError("no feasible pattern found in the enumeration")
    values = np.zeros((N + 1, F))
    values[1:] = best.reshape(N, F)
    return ControlTrajectory(metric, values)


def random_smooth_control(metric: ZMetric, rng, scale=1.0) -> ControlTrajectory:
    """Admissible control with smooth time profiles and random face data."""
    N, F = metric.n_steps, metric.n_faces
    t = np.linspace(0.0, 1.0, N + 1)
    profiles = np.stack([t**2, np.sin(np.pi * t), t**3 - t**2])
    amps = rng.standard_normal((3, F))
    values = scale * np.einsum("pn,pf->nf", profiles, amps)
    values = metric.subtract_means(values)
    values[0] = 0.0
    return ControlTrajectory(metric, values)


def random_smooth_field_control(metric: ZMetric, mesh, rng, scale=0.5):
    """Admissible control that is smooth in space and time.

    Random coefficients on a few smooth boundary fields sampled at the
    face centroids times smooth time profiles. Used by the gradient
    probes, where a rough direction would be nearly orthogonal to the
    smooth gradient and make relative comparisons meaningless.
    """
    c = mesh.face_centroids()
    fields = np.stack(
        [
            np.sin(np.pi * c[:, 0]) + c[:, 1],
            c[:, 0] * c[:, 2] + 0.5,
            np.cos(c[:, 1]),
            c[:, 0] - c[:, 1] ** 2,
        ]
    )
    t = np.linspace(0.0, 1.0, metric.n_steps + 1)
    profiles = np.stack([t**2, np.sin(np.pi * t), t**3 - t**2, t])
    amps = rng.standard_normal((4, 4))
    values = scale * np.einsum("pf,pq,qn->nf", fields, amps, profiles)
    values = metric.subtract_means(values)
    values[0] = 0.0
    return ControlTrajectory(metric, values)


def check_assembly_oracle() -> dict:
    """Every assembled block against the dense loop, plus the P1 mass."""
    from .materials import (
        BENCHMARK_DIELECTRIC,
        BENCHMARK_PIEZO,
        IsotropicElasticity,
        MaterialSet,
        constant_matrix_field,
        constant_scalar_field,
    )

    rho0, lam0, mu0 = 2.0, 1.3, 0.8
    mats = MaterialSet(
        rho=constant_scalar_field(rho0),
        stiffness=IsotropicElasticity(
            constant_scalar_field(lam0), constant_scalar_field(mu0)
        ).stiffness(),
        piezo=constant_matrix_field(BENCHMARK_PIEZO),
        dielectric=constant_matrix_field(BENCHMARK_DIELECTRIC),
        name="constant",
    )
    mesh = reference_tet_mesh(dirichlet=False)
    space_s = ScalarSpace(mesh, 2)
    space_v = VectorSpace(space_s)
    ops = assemble(space_v, space_s, mats)
    dense = dense_assembly_oracle(
        space_v, space_s, rho0, lam0, mu0, BENCHMARK_PIEZO, BENCHMARK_DIELECTRIC
    )
    worst = 0.0
    for name, mat in (
        ("mass", ops.mass),
        ("k_uu", ops.k_uu),
        ("k_up", ops.k_up),
        ("k_pp", ops.k_pp),
        ("bmap", ops.bmap),
    ):
        worst = max(worst, float(np.abs(mat.toarray() - dense[name]).max()))
    worst = max(worst, float(np.abs(ops.ground - dense["ground"]).max()))
    worst = max(
        worst, float(np.abs(ops.k_pu.toarray() - dense["k_up"].T).max())
    )

    # P1 mass matrix on one element with unit density: |K|/10 diagonal,
    # |K|/20 off-diagonal per scalar component
    mats1 = MaterialSet(
        rho=constant_scalar_field(1.0),
        stiffness=mats.stiffness,
        piezo=mats.piezo,
        dielectric=mats.dielectric,
    )
    s1 = ScalarSpace(mesh, 1)
    v1 = VectorSpace(s1)
    ops1 = assemble(v1, s1, mats1)
    vol = float(mesh.tet_volumes()[0])
    exact = np.full((4, 4), vol / 20.0)
    np.fill_diagonal(exact, vol / 10.0)
    m1 = ops1.mass.toarray()
    for i in range(4):
        for j in range(4):
            for c in range(3):
                worst = max(worst, abs(m1[3 * i + c, 3 * j + c] - exact[i, j]))
    tol = 1e-12
    return {
        "name": "assembly_oracle",
        "measured": worst,
        "tolerance": tol,
        "passed": bool(worst <= tol),
    }


def check_energy_conservation(n_steps=200) -> dict:
    """Drift of the discrete energy with zero control and nonzero start."""
    mesh = build_cube_mesh(2, DIRICHLET_RULES["xyz0"])
    ops = build_operators(mesh, 2)
    rng = np.random.default_rng(7)
    u0 = rng.standard_normal(ops.n_free)
    v0 = rng.standard_normal(ops.n_free)
    traj = solve_state(
        ops, n_steps=n_steps, t_final=1.0, initial_u=u0, initial_v=v0
    )
    en = trajectory_energies(traj)
    drift = float(np.abs(en - en[0]).max() / en[0])
    tol = 1e-10
    return {
        "name": "energy_conservation",
        "measured": drift,
        "tolerance": tol,
        "passed": bool(drift <= tol),
    }


def check_transposition_order(fault_injection=False) -> dict:
    """Duality-pairing defect shrinks like dt^2 under time refinement."""
    mesh = build_cube_mesh(2, DIRICHLET_RULES["xyz0"])
    ops = build_operators(
        mesh, 2, coupling_perturbation=1e-3 if fault_injection else 0.0
    )
    rng = np.random.default_rng(11)

    def f_fun(P, t):
        sp_part = np.stack(
            [P[:, 0] * P[:, 1], np.cos(P[:, 2]), P[:, 0] + P[:, 1] * P[:, 2]],
            axis=1,
        )
        return np.sin(1.5 * t) * sp_part

    gaps = []
    for n_steps in (8, 16, 32, 64):
        metric = control_metric(ops, n_steps, 1.0)
        y = random_smooth_control(metric, np.random.default_rng(3))
        gaps.append(transposition_gap(ops, f_fun, y, n_steps, 1.0))
    ratios = [gaps[i] / gaps[i + 1] for i in range(len(gaps) - 1)]
    ok = all(3.5 <= r <= 4.5 for r in ratios)
    return {
        "name": "transposition_order",
        "measured": ratios,
        "tolerance": "ratios in [3.5, 4.5]",
        "passed": bool(ok),
        "gaps": gaps,
    }


def check_fd_gradient(n_samples=5) -> dict:
    """Adjoint gradient against central differences of the functional."""
    from .control import z_inner
    from .optimizer import directional_derivative, evaluate_gradient

    mesh = build_cube_mesh(2, DIRICHLET_RULES["yfaces"])
    ops = build_operators(mesh, 2)
    errors = {}
    for n_steps in (32, 64):
        problem = build_reduced_problem(
            ops, tracking_desired_state, 1e-4, n_steps, 1.0
        )
        rng = np.random.default_rng(23)
        worst = 0.0
        for _ in range(n_samples):
            z = random_smooth_field_control(problem.metric, mesh, rng)
            y = random_smooth_field_control(problem.metric, mesh, rng)
            g = evaluate_gradient(problem, z)
            lhs = directional_derivative(problem, z, y, eps=1e-3)
            rhs = z_inner(g, y)
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-14))
        errors[n_steps] = worst
    tol = 1e-3
    ok = errors[32] <= tol and errors[64] < errors[32]
    return {
        "name": "fd_gradient",
        "measured": errors,
        "tolerance": tol,
        "passed": bool(ok),
    }


def check_qp_oracle() -> dict:
    """Projection against enumeration on tiny instances, plus invariants."""
    from .control import z_inner

    rng = np.random.default_rng(5)
    worst = 0.0
    for n_steps, n_faces, bounds in (
        (2, 2, (-0.4, 0.3)),
        (3, 2, (-0.25, 0.25)),
        (2, 2, (-1e6, 1e6)),
    ):
        metric = ZMetric(
            face_areas=rng.uniform(0.5, 1.5, n_faces), dt=0.5, n_steps=n_steps
        )
        for _ in range(3):
            raw = np.zeros((n_steps + 1, n_faces))
            raw[1:] = rng.standard_normal((n_steps, n_faces))
            z_raw = ControlTrajectory(metric, raw)
            q_fast = project_Q(z_raw, bounds)
            q_ref = brute_force_projection(metric, raw, bounds)
            worst = max(worst, float(np.abs(q_fast.values - q_ref.values).max()))

    # idempotence and the best-approximation inequality on larger data
    vi_worst = -np.inf
    idem_worst = 0.0
    metric = ZMetric(face_areas=rng.uniform(0.2, 1.0, 12), dt=0.25, n_steps=8)
    bounds = (-0.6, 0.8)
    for _ in range(20):
        raw = np.zeros((9, 12))
        raw[1:] = rng.standard_normal((8, 12))
        z_raw = ControlTrajectory(metric, raw)
        q = project_Q(z_raw, bounds)
        q2 = project_Q(q, bounds)
        idem_worst = max(idem_worst, metric.norm(q2.values - q.values))
        probe = project_Q(
            ControlTrajectory(metric, metric.subtract_means(
                np.vstack([np.zeros((1, 12)), rng.standard_normal((8, 12))])
            )),
            bounds,
        )
        resid = z_raw.with_values(z_raw.values - q.values)
        vi = z_inner(resid, probe.with_values(probe.values - q.values))
        vi_worst = max(vi_worst, vi)
    tol = 1e-9
    ok = worst <= tol and idem_worst <= 1e-11 and vi_worst <= 1e-9
    return {
        "name": "qp_oracle",
        "measured": {"entry_gap": worst, "idempotence": idem_worst,
                     "variational_inequality": vi_worst},
        "tolerance": tol,
        "passed": bool(ok),
    }


def run_verification(cfg: RunConfig) -> dict:
    """Run every oracle check and write a machine-readable report."""
    out = _outdir(cfg, "verification")
    checks = [
        check_assembly_oracle(),
        check_energy_conservation(),
        check_transposition_order(fault_injection=cfg.fault_injection),
        check_fd_gradient(),
        check_qp_oracle(),
    ]
    passed = all(c["passed"] for c in checks)
    report = {"passed": passed, "checks": checks}
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, default=str)
    for c in checks:
        state = "PASS" if c["passed"] else "FAIL"
        print(f"[{state}] {c['name']}: measured {c['measured']} vs {c['tolerance']}")
    return report
