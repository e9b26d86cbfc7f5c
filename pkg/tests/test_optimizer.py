import numpy as np
import pytest

from piezoctrl.control import ControlTrajectory, z_inner, z_norm
from piezoctrl.harness import (
    DIRICHLET_RULES,
    build_operators,
    random_smooth_field_control,
)
from piezoctrl.manufactured import tracking_desired_state
from piezoctrl.mesh import build_cube_mesh
from piezoctrl.optimizer import (
    ReducedProblem,
    build_reduced_problem,
    directional_derivative,
    evaluate_gradient,
    evaluate_jfd,
    misfit_term,
    optimality_gap,
    optimize,
    penalty_term,
    tracking_misfit,
)
from piezoctrl.timestepper import control_metric, solve_state


@pytest.fixture(scope="module")
def mesh2():
    return build_cube_mesh(2, DIRICHLET_RULES["yfaces"])


@pytest.fixture(scope="module")
def ops2(mesh2):
    return build_operators(mesh2, 2)


@pytest.fixture(scope="module")
def problem2(ops2):
    return build_reduced_problem(ops2, tracking_desired_state, 1e-4, 16, 1.0)


def zero_desired(P, t):
    return np.zeros((len(np.atleast_2d(P)), 3))


def test_jfd_zero_everything(ops2):
    problem = build_reduced_problem(ops2, zero_desired, 1e-4, 8, 1.0)
    z = ControlTrajectory.zeros(problem.metric)
    assert evaluate_jfd(problem, z) == 0.0


def test_jfd_zero_control_is_pure_desired_misfit(problem2):
    # with z = 0 the state stays zero and the functional is computable
    # directly from the projected desired state
    z = ControlTrajectory.zeros(problem2.metric)
    j = evaluate_jfd(problem2, z)
    dt = problem2.t_final / problem2.n_steps
    M = problem2.ops.mass
    acc = 0.0
    for n in range(1, problem2.n_steps + 1):
        e0 = -problem2.u_desired[n - 1]
        e1 = -problem2.u_desired[n]
        em = 0.5 * (e0 + e1)
        acc += (
            e0 @ (M @ e0) + 4.0 * (em @ (M @ em)) + e1 @ (M @ e1)
        )
    assert abs(j - dt / 12.0 * acc) < 1e-13 * (1 + abs(j))


def test_misfit_exact_for_linear_trajectory(ops2, rng):
    # Simpson weights integrate || t w ||^2 exactly: value T^3/6 * |w|^2
    problem = build_reduced_problem(ops2, zero_desired, 1e-4, 7, 1.0)
    w = rng.standard_normal(ops2.n_free)
    times = np.linspace(0, 1.0, 8)
    series = times[:, None] * w[None, :]
    expected = (w @ (ops2.mass @ w)) / 6.0
    assert abs(misfit_term(problem, series) - expected) < 1e-13 * expected


def test_penalty_computed_exactly(problem2, rng):
    z = random_smooth_field_control(problem2.metric, problem2.ops.space_s.mesh, rng)
    assert abs(
        penalty_term(problem2, z) - 0.5 * problem2.alpha * z_norm(z) ** 2
    ) < 1e-15


def test_gradient_at_matched_desired_state(ops2, rng):
    # u_d equal to the reachable state of some control: zero misfit there,
    # so the gradient representative is alpha times that control
    metric = control_metric(ops2, 12, 1.0)
    z_bar = random_smooth_field_control(metric, ops2.space_s.mesh, rng)
    traj = solve_state(ops2, control=z_bar, n_steps=12, t_final=1.0)
    problem = ReducedProblem(
        ops=ops2,
        metric=metric,
        u_desired=traj.u_free().copy(),
        alpha=2.5e-3,
        bounds=(-1e6, 1e6),
        n_steps=12,
        t_final=1.0,
    )
    g = evaluate_gradient(problem, z_bar)
    assert np.abs(g.values - 2.5e-3 * z_bar.values).max() < 1e-12


def test_gradient_against_central_differences(problem2, rng):
    z = random_smooth_field_control(problem2.metric, problem2.ops.space_s.mesh, rng)
    y = random_smooth_field_control(problem2.metric, problem2.ops.space_s.mesh, rng)
    g = evaluate_gradient(problem2, z)
    fd = directional_derivative(problem2, z, y, eps=1e-3)
    # N = 16 here, so the consistency floor of the scheme dominates
    assert abs(fd - z_inner(g, y)) <= 5e-3 * abs(fd)


def test_beta_map_linear_in_control_and_desired(ops2, rng):
    from piezoctrl.timestepper import solve_adjoint

    metric = control_metric(ops2, 8, 1.0)
    u_d1 = rng.standard_normal((9, ops2.n_free))
    u_d2 = rng.standard_normal((9, ops2.n_free))
    z1 = random_smooth_field_control(metric, ops2.space_s.mesh, rng)
    z2 = random_smooth_field_control(metric, ops2.space_s.mesh, rng)

    def beta_of(z, u_d):
        traj = solve_state(ops2, control=z, n_steps=8, t_final=1.0)
        return solve_adjoint(ops2, traj.u_free() - u_d, 8, 1.0).beta

    b1 = beta_of(z1, u_d1)
    b2 = beta_of(z2, u_d2)
    b12 = beta_of(z1.with_values(z1.values + z2.values), u_d1 + u_d2)
    assert np.abs(b12 - b1 - b2).max() < 1e-11 * (1 + np.abs(b12).max())


def test_invalid_problem_data(ops2):
    with pytest.raises(ValueError):
        build_reduced_problem(ops2, tracking_desired_state, 0.0, 8, 1.0)
    bad_desired = lambda P, t: np.ones((len(np.atleast_2d(P)), 3))
    with pytest.raises(ValueError):
        build_reduced_problem(ops2, bad_desired, 1e-4, 8, 1.0)


def test_optimize_trivial_problem(ops2):
    problem = build_reduced_problem(ops2, zero_desired, 1e-4, 8, 1.0)
    z, report = optimize(problem, tol=1e-6)
    assert report.iterations == 0
    assert report.converged
    assert np.abs(z.values).max() == 0.0


def test_optimize_descends_and_stays_feasible(problem2):
    z, report = optimize(problem2, tol=1e-6, max_iters=30)
    js = report.j_values
    assert all(js[i + 1] <= js[i] + 1e-15 for i in range(len(js) - 1))
    assert report.converged
    assert z.is_admissible(problem2.bounds)
    # projected-gradient norm at the solution meets the tolerance
    assert report.pg_norms[-1] <= 1e-6


def test_first_order_optimality_at_solution(problem2, rng):
    z, _ = optimize(problem2, tol=1e-6, max_iters=30)
    g = evaluate_gradient(problem2, z)
    probes = [
        random_smooth_field_control(problem2.metric, problem2.ops.space_s.mesh, rng)
        for _ in range(8)
    ]
    assert optimality_gap(problem2, z, g, probes) >= -1e-6 * (1 + z_norm(g))


def test_iteration_counts_mesh_independent_small():
    counts = []
    for m in (1, 2):
        mesh = build_cube_mesh(m, DIRICHLET_RULES["yfaces"])
        ops = build_operators(mesh, 2)
        problem = build_reduced_problem(
            ops, tracking_desired_state, 1e-4, 8 * m, 1.0
        )
        _, report = optimize(problem, tol=1e-6, max_iters=40)
        assert report.converged
        counts.append(report.iterations)
    assert abs(counts[0] - counts[1]) <= 1


def test_bounds_respected_when_active(ops2):
    problem = build_reduced_problem(
        ops2, tracking_desired_state, 1e-4, 16, 1.0, bounds=(-0.02, 0.02)
    )
    z, report = optimize(problem, tol=1e-6, max_iters=40)
    assert np.all(z.values >= -0.02 - 1e-12)
    assert np.all(z.values <= 0.02 + 1e-12)
    assert z.is_admissible(problem.bounds)


def test_tracking_misfit_improves(problem2):
    z_opt, _ = optimize(problem2, tol=1e-5, max_iters=30)
    zero = ControlTrajectory.zeros(problem2.metric)
    assert tracking_misfit(problem2, z_opt) < tracking_misfit(problem2, zero)


def test_report_csv(tmp_path, problem2):
    _, report = optimize(problem2, tol=1e-4, max_iters=5)
    path = tmp_path / "trace.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iter,j_fd,projected_grad_norm,step_length,backtracks"
    assert len(lines) == len(report.j_values) + 1
