"""Fully discrete boundary controls and their H1-in-time geometry.

A control is piecewise constant on the boundary faces and continuous
piecewise linear in time on a uniform grid t_n = n dt, with value zero at
t = 0. It is stored as an array of nodal values of shape (N + 1, F). The
squared control norm is the exact integral of ||dz/dt||^2 over the
boundary,

    |||z|||^2 = sum_n sum_F area_F (z[n,F] - z[n-1,F])^2 / dt,

and all optimization inner products are taken in this metric. Admissible
controls additionally have zero area-weighted boundary mean at every
time node and satisfy pointwise box bounds.

All operations here are pure functions of their inputs.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solveh_banded


class GridMismatch(Exception):
    """Raised when two control trajectories live on different grids."""


@dataclass(frozen=True)
class ZMetric:
    """Face areas and time step defining the control inner product."""

    face_areas: np.ndarray
    dt: float
    n_steps: int

    @property
    def n_faces(self):
        return self.face_areas.size

    @property
    def total_area(self):
        return float(self.face_areas.sum())

    def compatible(self, other: "ZMetric"):
        return (
            self.n_steps == other.n_steps
            and self.n_faces == other.n_faces
            and abs(self.dt - other.dt) < 1e-14 * max(self.dt, other.dt)
            and np.allclose(self.face_areas, other.face_areas)
        )

    def inner(self, a, b):
        """H1-in-time inner product of two (N+1, F) value arrays."""
        da = np.diff(a, axis=0)
        db = np.diff(b, axis=0)
        return float(np.einsum("nf,nf,f->", da, db, self.face_areas)) / self.dt

    def norm(self, a):
        return np.sqrt(max(self.inner(a, a), 0.0))

    def step_means(self, a):
        """Area-weighted boundary mean at each time node."""
        return a @ self.face_areas / self.total_area

    def subtract_means(self, a):
        return a - self.step_means(a)[:, None]


@dataclass(frozen=True)
class ControlTrajectory:
    """Nodal values (N+1, F) of a control with z(0) = 0."""

    metric: ZMetric
    values: np.ndarray

    def __post_init__(self):
        N, F = self.values.shape
        if N != self.metric.n_steps + 1 or F != self.metric.n_faces:
            raise GridMismatch(
                f"value array {self.values.shape} does not match grid "
                f"({self.metric.n_steps + 1}, {self.metric.n_faces})"
            )
        if np.any(self.values[0] != 0.0):
            raise ValueError("control must vanish at t = 0")

    @classmethod
    def zeros(cls, metric: ZMetric):
        return cls(metric, np.zeros((metric.n_steps + 1, metric.n_faces)))

    def with_values(self, values):
        return ControlTrajectory(self.metric, np.asarray(values, dtype=float))

    def rates(self):
        """Piecewise-constant time derivative, shape (N, F)."""
        return np.diff(self.values, axis=0) / self.metric.dt

    def is_admissible(self, bounds, tol=1e-11):
        za, zb = bounds
        v = self.values
        if np.any(v < za - tol) or np.any(v > zb + tol):
            return False
        means = self.metric.step_means(v)
        scale = 1.0 + np.abs(v).max()
        return bool(np.all(np.abs(means) <= tol * scale))


def _check_pair(a: ControlTrajectory, b: ControlTrajectory):
    if not a.metric.compatible(b.metric):
        raise GridMismatch("trajectories live on different grids")


def z_norm(z: ControlTrajectory) -> float:
    return z.metric.norm(z.values)


def z_inner(g: ControlTrajectory, y: ControlTrajectory) -> float:
    _check_pair(g, y)
    return g.metric.inner(g.values, y.values)


def time_stiffness(n_steps: int, dt: float) -> sp.csr_matrix:
    """H1-in-time stiffness on nodal values 1..N with value 0 pinned at 0.

    Tridiagonal with diagonal (2, ..., 2, 1)/dt and off-diagonal -1/dt.
    """
    main = np.full(n_steps, 2.0 / dt)
    main[-1] = 1.0 / dt
    off = np.full(n_steps - 1, -1.0 / dt)
    return sp.diags([off, main, off], (-1, 0, 1), format="csr")


def _time_stiffness_banded(n_steps, dt):
    ab = np.zeros((2, n_steps))
    ab[1, :] = 2.0 / dt
    ab[1, -1] = 1.0 / dt
    ab[0, 1:] = -1.0 / dt
    return ab


def pair_beta(beta, y: ControlTrajectory) -> float:
    """Exact time integral of <beta(t), y(t)> on the boundary.

    ``beta`` holds per-face integrals of the adjoint potential trace at
    every node, shape (N+1, F); both beta and y are interpolated linearly
    in time, so each interval contributes its exact P1 mass pairing
    dt/6 * (2 b_{n-1} y_{n-1} + b_{n-1} y_n + b_n y_{n-1} + 2 b_n y_n).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != y.values.shape:
        raise GridMismatch(
            f"beta shape {beta.shape} does not match control grid {y.values.shape}"
        )
    dt = y.metric.dt
    b0, b1 = beta[:-1], beta[1:]
    y0, y1 = y.values[:-1], y.values[1:]
    per_interval = (
        2.0 * np.einsum("nf,nf->", b0, y0)
        + np.einsum("nf,nf->", b0, y1)
        + np.einsum("nf,nf->", b1, y0)
        + 2.0 * np.einsum("nf,nf->", b1, y1)
    )
    return dt / 6.0 * per_interval


def riesz_gradient(beta, z: ControlTrajectory, alpha: float) -> ControlTrajectory:
    """Gradient representative of the reduced functional in the Z metric.

    Solves, face by face, the tridiagonal system equating the H1-in-time
    inner product of g with the pairing of the interpolated adjoint trace
    plus the penalty term,

        [[g, y]] = int <beta, y> + alpha [[z, y]]   for all test y,

    first without the zero-mean restriction and then subtracting the
    area-weighted boundary mean at each time node.
    """
    beta = np.asarray(beta, dtype=float)
    metric = z.metric
    N, F = metric.n_steps, metric.n_faces
    if beta.shape != (N + 1, F):
        raise GridMismatch(
            f"beta shape {beta.shape} does not match grid ({N + 1}, {F})"
        )
    dt = metric.dt

    # load of the interpolated trace against nodal hat functions in time
    r = np.zeros((N, F))
    if N > 1:
        r[:-1] = dt * (beta[:-2] / 6.0 + 2.0 * beta[1:-1] / 3.0 + beta[2:] / 6.0)
    r[-1] = dt * (beta[N - 1] / 6.0 + beta[N] / 3.0)

    ab = _time_stiffness_banded(N, dt)
    sol = solveh_banded(ab, r / metric.face_areas[None, :])

    values = np.zeros((N + 1, F))
    values[1:] = sol + alpha * z.values[1:]
    values = metric.subtract_means(values)
    values[0] = 0.0
    return ControlTrajectory(metric, values)


# ---------------------------------------------------------------------------
# projection onto the admissible set


def projection_hessian(metric: ZMetric) -> sp.csr_matrix:
    """Quadratic form of the projection problem on the stacked unknowns.

    Row-major stacking (time step outer, face inner) gives a matrix that
    is block-tridiagonal in the step index with diagonal blocks.
    """
    return sp.kron(
        time_stiffness(metric.n_steps, metric.dt),
        sp.diags(metric.face_areas),
        format="csr",
    )


def _mean_constraint_matrix(metric: ZMetric) -> sp.csr_matrix:
    return sp.kron(
        sp.identity(metric.n_steps, format="csr"),
        sp.csr_matrix(metric.face_areas[None, :]),
        format="csr",
    )


def project_Q(
    z_raw: ControlTrajectory,
    bounds=(-1e6, 1e6),
    max_iter=None,
    kkt_tol=1e-10,
) -> ControlTrajectory:
    """Best approximation in the control metric over the admissible set.

    Minimizes |||z_raw - q|||^2 subject to q(0) = 0, zero area-weighted
    boundary mean at every node, and za <= q <= zb entrywise. When no
    bound is active the minimizer is plain per-node mean subtraction;
    otherwise a primal active-set iteration on the stacked block
    tridiagonal system is used, started from the feasible point q = 0.
    """
    za, zb = bounds
    if za > 0.0 or zb < 0.0:
        raise ValueError(f"infeasible bounds ({za}, {zb}): need za <= 0 <= zb")
    metric = z_raw.metric
    N, F = metric.n_steps, metric.n_faces

    direct = metric.subtract_means(z_raw.values)
    direct[0] = 0.0
    if np.all(direct[1:] >= za) and np.all(direct[1:] <= zb):
        return ControlTrajectory(metric, direct)

    H = projection_hessian(metric)
    C = _mean_constraint_matrix(metric)
    target = z_raw.values[1:].ravel()
    n = N * F
    lo = np.full(n, za)
    hi = np.full(n, zb)
    if max_iter is None:
        max_iter = 3 * n + 10

    x = np.zeros(n)
    at_lo = np.zeros(n, dtype=bool)
    at_hi = np.zeros(n, dtype=bool)
    lam = np.zeros(N)

    for _ in range(max_iter):
        free = ~(at_lo | at_hi)
        grad = H @ (x - target)
        p, lam = _eq_qp_step(H, C, grad, free)
        scale = 1.0 + np.abs(x).max()
        if np.abs(p).max() <= 1e-13 * scale:
            s_stat = grad + C.T @ lam
            viol_hi = np.where(at_hi, s_stat, -np.inf)
            viol_lo = np.where(at_lo, -s_stat, -np.inf)
            gscale = 1.0 + np.abs(grad).max()
            worst = max(viol_hi.max(initial=-np.inf), viol_lo.max(initial=-np.inf))
            if worst <= 1e-12 * gscale:
                break
            if viol_hi.max(initial=-np.inf) >= viol_lo.max(initial=-np.inf):
                at_hi[int(np.argmax(viol_hi))] = False
            else:
                at_lo[int(np.argmax(viol_lo))] = False
            continue
        alpha = 1.0
        blocker = None
        pos = free & (p > 1e-300)
        neg = free & (p < -1e-300)
        if pos.any():
            ratios = (hi[pos] - x[pos]) / p[pos]
            i = int(np.argmin(ratios))
            if ratios[i] < alpha:
                alpha = max(ratios[i], 0.0)
                blocker = (np.flatnonzero(pos)[i], "hi")
        if neg.any():
            ratios = (lo[neg] - x[neg]) / p[neg]
            i = int(np.argmin(ratios))
            if ratios[i] < alpha:
                alpha = max(ratios[i], 0.0)
                blocker = (np.flatnonzero(neg)[i], "lo")
        x = x + alpha * p
        if blocker is not None:
            idx, side = blocker
            x[idx] = hi[idx] if side == "hi" else lo[idx]
            (at_hi if side == "hi" else at_lo)[idx] = True
    else:
        raise RuntimeError("projection active-set iteration did not terminate")

    values = np.zeros((N + 1, F))
    values[1:] = x.reshape(N, F)
    result = ControlTrajectory(metric, values)
    _check_projection_kkt(H, C, x, target, lam, at_lo, at_hi, lo, hi, kkt_tol)
    return result


def _eq_qp_step(H, C, grad, free):
    """Step of the equality constrained subproblem on the free variables.

    Pinned variables do not move; mean rows that touch no free variable
    are dropped (they hold automatically along the step).
    """
    nfree = int(free.sum())
    Cf = C[:, free]
    keep = np.flatnonzero(np.diff(Cf.indptr) > 0)
    Cf = Cf[keep]
    Hff = H[free][:, free]
    K = sp.bmat([[Hff, Cf.T], [Cf, None]], format="csc")
    rhs = np.concatenate([-grad[free], np.zeros(len(keep))])
    if K.shape[0] <= 400:
        sol = np.linalg.solve(K.toarray(), rhs)
    else:
        sol = sp.linalg.spsolve(K, rhs)
    p = np.zeros(free.size)
    p[free] = sol[:nfree]
    lam = np.zeros(C.shape[0])
    lam[keep] = sol[nfree:]
    return p, lam


def _check_projection_kkt(H, C, x, target, lam, at_lo, at_hi, lo, hi, tol):
    grad = H @ (x - target)
    s_stat = grad + C.T @ lam
    scale = 1.0 + np.abs(grad).max()
    free = ~(at_lo | at_hi)
    stationarity = np.abs(s_stat[free]).max(initial=0.0)
    primal = max(
        np.abs(C @ x).max(initial=0.0),
        (lo - x).max(initial=0.0),
        (x - hi).max(initial=0.0),
    )
    if stationarity > tol * scale or primal > tol * (1.0 + np.abs(x).max()):
        raise RuntimeError(
            f"projection KKT residual too large: stationarity {stationarity:g}, "
            f"primal {primal:g}"
        )
