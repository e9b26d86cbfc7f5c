import numpy as np
import pytest

from piezoctrl.control import (
    ControlTrajectory,
    GridMismatch,
    ZMetric,
    pair_beta,
    project_Q,
    projection_hessian,
    riesz_gradient,
    time_stiffness,
    z_inner,
    z_norm,
)
from piezoctrl.harness import brute_force_projection, random_smooth_control


def make_metric(n_steps=4, n_faces=3, dt=0.25, areas=None):
    if areas is None:
        areas = np.array([0.5, 1.0, 0.75][:n_faces])
    return ZMetric(face_areas=np.asarray(areas, dtype=float), dt=dt, n_steps=n_steps)


# ---------------------------------------------------------------------------
# norms and inner products


def test_zero_control_has_zero_norm():
    metric = make_metric()
    assert z_norm(ControlTrajectory.zeros(metric)) == 0.0


def test_single_step_single_face_norm():
    # one face of area A, one step: norm^2 = A c^2 / dt
    metric = ZMetric(face_areas=np.array([0.7]), dt=0.2, n_steps=1)
    z = ControlTrajectory(metric, np.array([[0.0], [3.0]]))
    assert abs(z_norm(z) ** 2 - 0.7 * 9.0 / 0.2) < 1e-14


def test_inner_consistent_with_norm(rng):
    metric = make_metric()
    z = random_smooth_control(metric, rng)
    assert abs(z_inner(z, z) - z_norm(z) ** 2) < 1e-13 * (1 + z_norm(z) ** 2)


def test_norm_positive_definite(rng):
    metric = make_metric()
    z = random_smooth_control(metric, rng)
    if np.abs(z.values).max() > 0:
        assert z_norm(z) > 0


def test_grid_mismatch_rejected(rng):
    a = random_smooth_control(make_metric(4, 3), rng)
    b = random_smooth_control(make_metric(5, 3, dt=0.2), rng)
    with pytest.raises(GridMismatch):
        z_inner(a, b)


def test_nonzero_start_rejected():
    metric = make_metric(n_steps=1, n_faces=1, areas=[1.0])
    with pytest.raises(ValueError):
        ControlTrajectory(metric, np.array([[1.0], [0.0]]))


# ---------------------------------------------------------------------------
# trace pairing


def test_pair_beta_zero_direction(rng):
    metric = make_metric()
    beta = rng.standard_normal((5, 3))
    y = ControlTrajectory.zeros(metric)
    assert pair_beta(beta, y) == 0.0


def test_pair_beta_single_interval():
    # N=1, both linear from zero: integral = dt/3 <beta_1, y_1>
    metric = ZMetric(face_areas=np.array([2.0, 0.5]), dt=0.4, n_steps=1)
    beta = np.array([[0.0, 0.0], [1.5, -2.0]])
    y = ControlTrajectory(metric, np.array([[0.0, 0.0], [0.25, 1.0]]))
    expected = 0.4 / 3.0 * (1.5 * 0.25 + (-2.0) * 1.0)
    assert abs(pair_beta(beta, y) - expected) < 1e-15


def test_pair_beta_constant_trace_step_direction():
    # constant beta against y that jumps to y1 at the first node and stays:
    # exact integral is <b, y1> (T - dt/2)
    metric = ZMetric(face_areas=np.array([1.0, 1.0]), dt=0.25, n_steps=4)
    b = np.array([0.3, -1.1])
    beta = np.tile(b, (5, 1))
    vals = np.zeros((5, 2))
    vals[1:] = np.array([2.0, 0.5])
    y = ControlTrajectory(metric, vals)
    T = 1.0
    expected = float(b @ vals[1]) * (T - 0.125)
    assert abs(pair_beta(beta, y) - expected) < 1e-14


def test_pair_beta_matches_fine_quadrature(rng):
    # oracle: trapezoid on a very fine resampling of the P1 interpolants
    metric = make_metric(n_steps=3, n_faces=2, dt=1.0 / 3.0, areas=[1.0, 1.0])
    beta = rng.standard_normal((4, 2))
    y = random_smooth_control(metric, rng)
    ts = np.linspace(0, 1, 4)
    fine = np.linspace(0, 1, 20001)
    acc = 0.0
    for f in range(2):
        bf = np.interp(fine, ts, beta[:, f])
        yf = np.interp(fine, ts, y.values[:, f])
        acc += np.trapezoid(bf * yf, fine)
    assert abs(pair_beta(beta, y) - acc) < 1e-8


# ---------------------------------------------------------------------------
# gradient Riesz solve


def test_riesz_zero_trace_returns_scaled_control(rng):
    metric = make_metric()
    z = random_smooth_control(metric, rng)
    g = riesz_gradient(np.zeros((5, 3)), z, alpha=0.37)
    assert np.abs(g.values - 0.37 * z.values).max() < 1e-13


def test_riesz_matches_dense_oracle(rng):
    metric = make_metric(n_steps=5, n_faces=4, dt=0.2, areas=[0.25, 0.5, 1.0, 0.75])
    beta = rng.standard_normal((6, 4))
    z = random_smooth_control(metric, rng)
    alpha = 1e-2
    g = riesz_gradient(beta, z, alpha)

    # dense assembly of the variational system on the stacked unknowns,
    # solved without the zero-mean restriction, then mean subtraction
    N, F = 5, 4
    H = projection_hessian(metric).toarray()
    r = np.zeros((N, F))
    dt = metric.dt
    for n in range(1, N):
        r[n - 1] = dt * (beta[n - 1] / 6 + 2 * beta[n] / 3 + beta[n + 1] / 6)
    r[N - 1] = dt * (beta[N - 1] / 6 + beta[N] / 3)
    rhs = r.ravel() + alpha * (H @ z.values[1:].ravel())
    sol = np.linalg.solve(H, rhs).reshape(N, F)
    vals = np.zeros((N + 1, F))
    vals[1:] = sol
    vals -= (vals @ metric.face_areas / metric.face_areas.sum())[:, None]
    assert np.abs(g.values - vals).max() < 1e-12


def test_riesz_output_has_zero_means(rng):
    metric = make_metric()
    beta = rng.standard_normal((5, 3))
    z = random_smooth_control(metric, rng)
    g = riesz_gradient(beta, z, 1e-3)
    means = g.values @ metric.face_areas
    assert np.abs(means).max() < 1e-12 * (1 + np.abs(g.values).max())


def test_riesz_jointly_linear(rng):
    metric = make_metric()
    b1 = rng.standard_normal((5, 3))
    b2 = rng.standard_normal((5, 3))
    z1 = random_smooth_control(metric, rng)
    z2 = random_smooth_control(metric, rng)
    alpha = 0.05
    g_sum = riesz_gradient(b1 + b2, z1.with_values(z1.values + z2.values), alpha)
    g1 = riesz_gradient(b1, z1, alpha)
    g2 = riesz_gradient(b2, z2, alpha)
    assert np.abs(g_sum.values - g1.values - g2.values).max() < 1e-12


def test_riesz_defining_equation(rng):
    # [[g, y]] = pairing + alpha [[z, y]] for admissible test directions
    metric = make_metric(n_steps=6, n_faces=5, dt=0.1, areas=[1, 2, 0.5, 0.25, 1.25])
    beta = rng.standard_normal((7, 5))
    z = random_smooth_control(metric, rng)
    alpha = 0.01
    g = riesz_gradient(beta, z, alpha)
    for _ in range(5):
        y = random_smooth_control(metric, rng)
        lhs = z_inner(g, y)
        rhs = pair_beta(beta, y) + alpha * z_inner(z, y)
        assert abs(lhs - rhs) < 1e-12 * (1 + abs(rhs))


# ---------------------------------------------------------------------------
# projection


def test_projection_identity_on_admissible(rng):
    metric = make_metric()
    z = random_smooth_control(metric, rng)
    q = project_Q(z, bounds=(-1e6, 1e6))
    assert np.abs(q.values - z.values).max() < 1e-11 * (1 + np.abs(z.values).max())


def test_projection_unbounded_is_mean_subtraction(rng):
    metric = make_metric()
    raw = np.zeros((5, 3))
    raw[1:] = rng.standard_normal((4, 3))
    z = ControlTrajectory(metric, raw)
    q = project_Q(z, bounds=(-1e6, 1e6))
    expected = raw - (raw @ metric.face_areas / metric.face_areas.sum())[:, None]
    expected[0] = 0.0
    assert np.abs(q.values - expected).max() < 1e-12


def test_projection_matches_enumeration(rng):
    metric = ZMetric(face_areas=np.array([0.8, 1.2]), dt=0.5, n_steps=2)
    for _ in range(5):
        raw = np.zeros((3, 2))
        raw[1:] = 1.5 * rng.standard_normal((2, 2))
        z = ControlTrajectory(metric, raw)
        bounds = (-0.4, 0.35)
        q = project_Q(z, bounds)
        ref = brute_force_projection(metric, raw, bounds)
        assert np.abs(q.values - ref.values).max() < 1e-9


def test_projection_idempotent_with_active_bounds(rng):
    metric = make_metric(n_steps=6, n_faces=4, areas=[1, 0.5, 0.75, 1.25])
    bounds = (-0.5, 0.4)
    raw = np.zeros((7, 4))
    raw[1:] = rng.standard_normal((6, 4))
    q = project_Q(ControlTrajectory(metric, raw), bounds)
    q2 = project_Q(q, bounds)
    assert metric.norm(q2.values - q.values) < 1e-11


def test_projection_variational_inequality(rng):
    metric = make_metric(n_steps=5, n_faces=3)
    bounds = (-0.3, 0.6)
    raw = np.zeros((6, 3))
    raw[1:] = rng.standard_normal((5, 3))
    z = ControlTrajectory(metric, raw)
    q = project_Q(z, bounds)
    for _ in range(10):
        probe = project_Q(random_smooth_control(metric, rng), bounds)
        vi = metric.inner(z.values - q.values, probe.values - q.values)
        assert vi <= 1e-10 * (1 + abs(vi))


def test_projection_infeasible_bounds():
    metric = make_metric()
    z = ControlTrajectory.zeros(metric)
    with pytest.raises(ValueError):
        project_Q(z, bounds=(0.1, 1.0))
    with pytest.raises(ValueError):
        project_Q(z, bounds=(-1.0, -0.1))


def test_projection_hessian_block_tridiagonal():
    metric = make_metric(n_steps=5, n_faces=3)
    H = projection_hessian(metric).tocoo()
    F = metric.n_faces
    for i, j in zip(H.row, H.col):
        ni, fi = divmod(i, F)
        nj, fj = divmod(j, F)
        assert abs(ni - nj) <= 1
        assert fi == fj


def test_time_stiffness_definition():
    A = time_stiffness(4, 0.5).toarray()
    expected = np.array(
        [
            [4.0, -2.0, 0.0, 0.0],
            [-2.0, 4.0, -2.0, 0.0],
            [0.0, -2.0, 4.0, -2.0],
            [0.0, 0.0, -2.0, 2.0],
        ]
    )
    assert np.allclose(A, expected)
