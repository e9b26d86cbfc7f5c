"""Reduced tracking functional and the projected quasi-Newton loop.

The reduced functional couples the exact time integral of the linearly
interpolated tracking error with the exactly computed control penalty,

    j(z) = dt/12 sum_n ( ||e_{n-1}||^2 + 4 ||(e_{n-1}+e_n)/2||^2
                         + ||e_n||^2 )_rho  +  alpha/2 |||z|||^2,

where e_n = u_n - u_n^d and u_n^d is the density-weighted projection of
the desired displacement at node n. Its gradient is assembled from one
forward solve, one backward adjoint solve, and the tridiagonal Riesz
solve in the control metric, so the representative lives in the same
Hilbert space as the iterates. Limited-memory BFGS with all inner
products taken in that metric keeps iteration counts essentially
independent of the mesh; iterates stay admissible through the metric
projection, and a backtracking line search guarantees monotone descent.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import (
    ControlTrajectory,
    ZMetric,
    project_Q,
    riesz_gradient,
    z_inner,
    z_norm,
)
from .fespace import DiscreteOperators, project_L2_weighted
from .quadrature import tetrahedron_rule
from .timestepper import control_metric, solve_adjoint, solve_state


@dataclass(frozen=True)
class ReducedProblem:
    """Frozen data of one control problem instance."""

    ops: DiscreteOperators
    metric: ZMetric
    u_desired: np.ndarray
    alpha: float
    bounds: tuple
    n_steps: int
    t_final: float

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError(f"penalty weight must be positive, got {self.alpha}")
        norms = np.sqrt(
            np.einsum("nf,nf->n", self.u_desired, (self.ops.mass @ self.u_desired.T).T)
        )
        if norms[0] > 1e-8 * (1.0 + norms.max()):
            raise ValueError("desired state must vanish at t = 0")


@dataclass
class OptimizerReport:
    """Per-iterate record of the optimization run."""

    j_values: list = field(default_factory=list)
    pg_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    line_search_failed: bool = False
    wall_time: float = 0.0

    def rows(self):
        return [
            (k, self.j_values[k], self.pg_norms[k], self.steps[k], self.backtracks[k])
            for k in range(len(self.j_values))
        ]

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,j_fd,projected_grad_norm,step_length,backtracks\n")
            for row in self.rows():
                fh.write(f"{row[0]},{row[1]:.16e},{row[2]:.16e},{row[3]:g},{row[4]}\n")


def build_reduced_problem(
    ops: DiscreteOperators,
    desired_state,
    alpha: float,
    n_steps: int,
    t_final: float,
    bounds=(-1e6, 1e6),
) -> ReducedProblem:
    """Project the desired displacement at every node and freeze the data."""
    metric = control_metric(ops, n_steps, t_final)
    dt = t_final / n_steps
    quad = tetrahedron_rule(2 * ops.space_s.degree + 2)
    mass_solve = ops.mass_solver()
    u_d = np.stack(
        [
            project_L2_weighted(
                ops.space_v,
                lambda P, t=n * dt: desired_state(P, t),
                ops.materials.rho,
                quad=quad,
                mass_solve=mass_solve,
            )
            for n in range(n_steps + 1)
        ]
    )
    return ReducedProblem(
        ops=ops,
        metric=metric,
        u_desired=u_d,
        alpha=alpha,
        bounds=bounds,
        n_steps=n_steps,
        t_final=t_final,
    )


def misfit_term(problem: ReducedProblem, u_free_series) -> float:
    """Exact time integral of half the squared interpolated tracking error."""
    e = u_free_series - problem.u_desired
    Me = (problem.ops.mass @ e.T).T
    sq = np.einsum("nf,nf->n", e, Me)
    cross = np.einsum("nf,nf->n", e[:-1], Me[1:])
    dt = problem.t_final / problem.n_steps
    # dt/12 * (|e0|^2 + 4|mid|^2 + |e1|^2) per interval, expanded
    return dt / 6.0 * float(sq[:-1].sum() + sq[1:].sum() + cross.sum())


def penalty_term(problem: ReducedProblem, z: ControlTrajectory) -> float:
    return 0.5 * problem.alpha * z_norm(z) ** 2


def evaluate_jfd(problem: ReducedProblem, z: ControlTrajectory) -> float:
    traj = solve_state(
        problem.ops, control=z, n_steps=problem.n_steps, t_final=problem.t_final
    )
    return misfit_term(problem, traj.u_free()) + penalty_term(problem, z)


def gradient_from_state(problem: ReducedProblem, z, u_free_series) -> ControlTrajectory:
    """Adjoint sweep and Riesz solve for a state already computed."""
    misfit = u_free_series - problem.u_desired
    adj = solve_adjoint(problem.ops, misfit, problem.n_steps, problem.t_final)
    return riesz_gradient(adj.beta, z, problem.alpha)


def evaluate_gradient(problem: ReducedProblem, z: ControlTrajectory) -> ControlTrajectory:
    traj = solve_state(
        problem.ops, control=z, n_steps=problem.n_steps, t_final=problem.t_final
    )
    return gradient_from_state(problem, z, traj.u_free())


def tracking_misfit(problem: ReducedProblem, z: ControlTrajectory) -> float:
    """Space-time weighted norm of the tracking error for a given control."""
    traj = solve_state(
        problem.ops, control=z, n_steps=problem.n_steps, t_final=problem.t_final
    )
    return np.sqrt(2.0 * misfit_term(problem, traj.u_free()))


def directional_derivative(problem, z, y, eps=1e-4) -> float:
    """Central difference of j along an admissible direction."""
    zp = z.with_values(z.values + eps * y.values)
    zm = z.with_values(z.values - eps * y.values)
    return (evaluate_jfd(problem, zp) - evaluate_jfd(problem, zm)) / (2.0 * eps)


def optimality_gap(problem, z, g, directions) -> float:
    """Smallest value of [[g, q - z]] over sampled admissible q.

    Nonnegative values certify the discrete first-order condition at z
    up to the sampling.
    """
    worst = np.inf
    for q in directions:
        worst = min(worst, z_inner(g, q.with_values(q.values - z.values)))
    return worst


def _value_and_gradient(problem, z):
    traj = solve_state(
        problem.ops, control=z, n_steps=problem.n_steps, t_final=problem.t_final
    )
    uf = traj.u_free()
    j = misfit_term(problem, uf) + penalty_term(problem, z)
    g = gradient_from_state(problem, z, uf)
    return j, g


def _two_loop(metric, g_values, pairs):
    """L-BFGS two-loop recursion in the control metric."""
    q = g_values.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * metric.inner(s, q)
        alphas.append(a)
        q = q - a * y
    if pairs:
        s, y, rho = pairs[-1]
        gamma = metric.inner(s, y) / metric.inner(y, y)
        q = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * metric.inner(y, q)
        q = q + (a - b) * s
    return q


def optimize(
    problem: ReducedProblem,
    z_init: Optional[ControlTrajectory] = None,
    tol: float = 1e-6,
    max_iters: int = 50,
    memory: int = 10,
    c1: float = 1e-4,
    max_backtracks: int = 30,
    verbose: bool = False,
):
    """Projected limited-memory BFGS in the control metric.

    Stops when the projected-gradient step |||z - Q(z - g)||| drops to
    ``tol`` or the iteration budget is exhausted. A failed line search
    is reported, not fatal: the best iterate found is returned.
    """
    start = time.perf_counter()
    metric = problem.metric
    if z_init is None:
        z = ControlTrajectory.zeros(metric)
    else:
        z = project_Q(z_init, problem.bounds)
    j, g = _value_and_gradient(problem, z)

    report = OptimizerReport()
    pairs = []

    for it in range(max_iters + 1):
        pg = z.values - project_Q(
            z.with_values(z.values - g.values), problem.bounds
        ).values
        pg_norm = metric.norm(pg)
        report.j_values.append(j)
        report.pg_norms.append(pg_norm)
        if verbose:
            print(f"  iter {it:3d}  j = {j:.10e}  |pg| = {pg_norm:.3e}")
        if pg_norm <= tol:
            report.converged = True
            report.steps.append(0.0)
            report.backtracks.append(0)
            break
        if it == max_iters:
            report.steps.append(0.0)
            report.backtracks.append(0)
            break

        d = -_two_loop(metric, g.values, pairs)
        if metric.inner(d, g.values) >= 0.0:
            d = -g.values
        step = 1.0
        accepted = False
        backtracks = 0
        while backtracks <= max_backtracks:
            z_trial = project_Q(z.with_values(z.values + step * d), problem.bounds)
            move = z_trial.values - z.values
            if metric.norm(move) <= 1e-16 * (1.0 + metric.norm(z.values)):
                break
            traj = solve_state(
                problem.ops,
                control=z_trial,
                n_steps=problem.n_steps,
                t_final=problem.t_final,
            )
            uf = traj.u_free()
            j_trial = misfit_term(problem, uf) + penalty_term(problem, z_trial)
            if j_trial <= j + c1 * metric.inner(g.values, move):
                accepted = True
                break
            step *= 0.5
            backtracks += 1

        if not accepted:
            report.line_search_failed = True
            report.steps.append(0.0)
            report.backtracks.append(backtracks)
            break

        g_new = gradient_from_state(problem, z_trial, uf)
        s_vals = z_trial.values - z.values
        y_vals = g_new.values - g.values
        curv = metric.inner(s_vals, y_vals)
        if curv > 1e-12 * metric.norm(s_vals) * metric.norm(y_vals):
            pairs.append((s_vals, y_vals, 1.0 / curv))
            if len(pairs) > memory:
                pairs.pop(0)

        z, j, g = z_trial, j_trial, g_new
        report.iterations += 1
        report.steps.append(step)
        report.backtracks.append(backtracks)

    report.wall_time = time.perf_counter() - start
    return z, report
