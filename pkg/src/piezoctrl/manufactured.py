"""Closed-form benchmark solutions and the data they induce.

The space-time verification case uses the benchmark material set and the
exact fields

    u(x, t) = H(2t - 2/5) * U(x),      psi(x, t) = t^2 * Phi(x),

with U a vector of trigonometric/polynomial components, Phi a cubic with
zero integral over the unit cube, and H the degree-10 polynomial ramp
that vanishes to fourth order at 0 and reaches 1 at its right end. The
volume sources, traction, boundary flux and Dirichlet data that make
this pair an exact solution are derived by hand from the strong form;
their first and second spatial derivatives below are written out term by
term and cross-checked against finite differences in the test suite.
"""

import numpy as np
from numpy.polynomial import Polynomial

from .materials import (
    BENCHMARK_DIELECTRIC,
    BENCHMARK_PIEZO,
    benchmark_lambda,
    benchmark_mu,
    benchmark_rho,
    piezo_full_tensor,
)
from .timestepper import Sources

# ramp H on (0,1): s^5 * (1 - 5(s-1) + 15(s-1)^2 - 35(s-1)^3 + 70(s-1)^4
#                         - 126(s-1)^5), extended by 0 and 1. Kept in the
# factored form: the monomial expansion has coefficients up to 1800 of
# alternating sign and cancels catastrophically near s = 1.
_P = Polynomial([1.0, -5.0, 15.0, -35.0, 70.0, -126.0])
_P1 = _P.deriv()
_P2 = _P1.deriv()


def smooth_heaviside(s):
    """Polynomial ramp: 0 for s <= 0, 1 for s >= 1, C^4 in between."""
    s = np.asarray(s, dtype=float)
    sc = np.clip(s, 0.0, 1.0)
    out = np.where(s >= 1.0, 1.0, 0.0)
    mid = (s > 0.0) & (s < 1.0)
    return np.where(mid, sc**5 * _P(sc - 1.0), out)


def smooth_heaviside_d1(s):
    s = np.asarray(s, dtype=float)
    sc = np.clip(s, 0.0, 1.0)
    mid = (s > 0.0) & (s < 1.0)
    val = 5.0 * sc**4 * _P(sc - 1.0) + sc**5 * _P1(sc - 1.0)
    return np.where(mid, val, 0.0)


def smooth_heaviside_d2(s):
    s = np.asarray(s, dtype=float)
    sc = np.clip(s, 0.0, 1.0)
    mid = (s > 0.0) & (s < 1.0)
    val = (
        20.0 * sc**3 * _P(sc - 1.0)
        + 10.0 * sc**4 * _P1(sc - 1.0)
        + sc**5 * _P2(sc - 1.0)
    )
    return np.where(mid, val, 0.0)


def _theta(t):
    return float(smooth_heaviside(2.0 * t - 0.4))


def _theta_d1(t):
    return 2.0 * float(smooth_heaviside_d1(2.0 * t - 0.4))


def _theta_d2(t):
    return 4.0 * float(smooth_heaviside_d2(2.0 * t - 0.4))


def _shape_u(P):
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    U = np.empty_like(P)
    U[:, 0] = np.cos(np.pi * x) * np.sin(np.pi * y) * np.cos(np.pi * z)
    U[:, 1] = 5 * x**2 * y * z + 4 * x * y**2 * z + 3 * x * y * z**2 + 17.0
    U[:, 2] = np.cos(2 * x) * np.cos(3 * y) * np.cos(z)
    return U


def _shape_grad_u(P):
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    pi = np.pi
    cx, sx = np.cos(pi * x), np.sin(pi * x)
    cy, sy = np.cos(pi * y), np.sin(pi * y)
    cz, sz = np.cos(pi * z), np.sin(pi * z)
    G = np.empty(P.shape[:1] + (3, 3))
    G[:, 0, 0] = -pi * sx * sy * cz
    G[:, 0, 1] = pi * cx * cy * cz
    G[:, 0, 2] = -pi * cx * sy * sz
    G[:, 1, 0] = 10 * x * y * z + 4 * y**2 * z + 3 * y * z**2
    G[:, 1, 1] = 5 * x**2 * z + 8 * x * y * z + 3 * x * z**2
    G[:, 1, 2] = 5 * x**2 * y + 4 * x * y**2 + 6 * x * y * z
    c2x, s2x = np.cos(2 * x), np.sin(2 * x)
    c3y, s3y = np.cos(3 * y), np.sin(3 * y)
    c1z, s1z = np.cos(z), np.sin(z)
    G[:, 2, 0] = -2 * s2x * c3y * c1z
    G[:, 2, 1] = -3 * c2x * s3y * c1z
    G[:, 2, 2] = -c2x * c3y * s1z
    return G


def _shape_hess_u(P):
    """Second derivatives, HU[:, c, a, b] = d^2 U_c / dx_a dx_b."""
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    pi = np.pi
    cx, sx = np.cos(pi * x), np.sin(pi * x)
    cy, sy = np.cos(pi * y), np.sin(pi * y)
    cz, sz = np.cos(pi * z), np.sin(pi * z)
    H = np.empty(P.shape[:1] + (3, 3, 3))
    U1 = cx * sy * cz
    H[:, 0, 0, 0] = -pi * pi * U1
    H[:, 0, 1, 1] = -pi * pi * U1
    H[:, 0, 2, 2] = -pi * pi * U1
    H[:, 0, 0, 1] = H[:, 0, 1, 0] = -pi * pi * sx * cy * cz
    H[:, 0, 0, 2] = H[:, 0, 2, 0] = pi * pi * sx * sy * sz
    H[:, 0, 1, 2] = H[:, 0, 2, 1] = -pi * pi * cx * cy * sz
    H[:, 1, 0, 0] = 10 * y * z
    H[:, 1, 1, 1] = 8 * x * z
    H[:, 1, 2, 2] = 6 * x * y
    H[:, 1, 0, 1] = H[:, 1, 1, 0] = 10 * x * z + 8 * y * z + 3 * z**2
    H[:, 1, 0, 2] = H[:, 1, 2, 0] = 10 * x * y + 4 * y**2 + 6 * y * z
    H[:, 1, 1, 2] = H[:, 1, 2, 1] = 5 * x**2 + 8 * x * y + 6 * x * z
    c2x, s2x = np.cos(2 * x), np.sin(2 * x)
    c3y, s3y = np.cos(3 * y), np.sin(3 * y)
    c1z, s1z = np.cos(z), np.sin(z)
    U3 = c2x * c3y * c1z
    H[:, 2, 0, 0] = -4 * U3
    H[:, 2, 1, 1] = -9 * U3
    H[:, 2, 2, 2] = -U3
    H[:, 2, 0, 1] = H[:, 2, 1, 0] = 6 * s2x * s3y * c1z
    H[:, 2, 0, 2] = H[:, 2, 2, 0] = 2 * s2x * c3y * s1z
    H[:, 2, 1, 2] = H[:, 2, 2, 1] = 3 * c2x * s3y * s1z
    return H


def _shape_psi(P):
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    return x**3 + x**3 * y - 3 * x * y**2 * z - z**3 / 3.0 - 1.0 / 24.0


def _shape_grad_psi(P):
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    G = np.empty_like(P)
    G[:, 0] = 3 * x**2 + 3 * x**2 * y - 3 * y**2 * z
    G[:, 1] = x**3 - 6 * x * y * z
    G[:, 2] = -3 * x * y**2 - z**2
    return G


def _shape_hess_psi(P):
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    H = np.empty(P.shape[:1] + (3, 3))
    H[:, 0, 0] = 6 * x + 6 * x * y
    H[:, 1, 1] = -6 * x * z
    H[:, 2, 2] = -2 * z
    H[:, 0, 1] = H[:, 1, 0] = 3 * x**2 - 6 * y * z
    H[:, 0, 2] = H[:, 2, 0] = -3 * y**2
    H[:, 1, 2] = H[:, 2, 1] = -6 * x * y
    return H


def _grad_lambda(P):
    r2 = (P**2).sum(axis=1)
    return -2.0 * P / (1.0 + r2)[:, None] ** 2


def _grad_mu(P):
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    s = np.sin(x * y * z)
    return -s[:, None] * np.stack([y * z, x * z, x * y], axis=1)


_E_FULL = piezo_full_tensor(BENCHMARK_PIEZO)


def _elastic_divergence(P):
    """div(2 mu eps(U) + lambda div(U) I) for the benchmark Lame fields."""
    G = _shape_grad_u(P)
    HU = _shape_hess_u(P)
    mu = benchmark_mu(P)
    lam = benchmark_lambda(P)
    gmu = _grad_mu(P)
    glam = _grad_lambda(P)

    divU = np.einsum("ncc->n", G)
    # d_i div U = sum_j d^2 U_j / dx_i dx_j
    grad_div = np.einsum("njij->ni", HU)
    lap = np.einsum("niaa->ni", HU)
    eps = 0.5 * (G + np.swapaxes(G, 1, 2))
    div_eps = 0.5 * (lap + grad_div)
    return (
        2.0 * mu[:, None] * div_eps
        + 2.0 * np.einsum("nij,nj->ni", eps, gmu)
        + lam[:, None] * grad_div
        + divU[:, None] * glam
    )


def _coupling_divergence_psi(P):
    """div(E grad psi) with constant coupling, from the Hessian of Phi."""
    Hp = _shape_hess_psi(P)
    return np.einsum("ijk,njk->ni", _E_FULL, Hp)


def _coupling_divergence_u(P):
    """div(E^T eps(U)) with constant coupling, from the Hessian of U."""
    HU = _shape_hess_u(P)
    return np.einsum("ijk,nijk->n", _E_FULL, HU)


class ManufacturedCase:
    """Exact fields plus the strong-form data they induce.

    Provides the closures the state solver consumes and the exact values
    and gradients the error norms compare against.
    """

    def exact_u(self, P, t):
        return _theta(t) * _shape_u(np.atleast_2d(P))

    def exact_u_t(self, P, t):
        return _theta_d1(t) * _shape_u(np.atleast_2d(P))

    def exact_u_tt(self, P, t):
        return _theta_d2(t) * _shape_u(np.atleast_2d(P))

    def exact_grad_u(self, P, t):
        return _theta(t) * _shape_grad_u(np.atleast_2d(P))

    def exact_psi(self, P, t):
        return t * t * _shape_psi(np.atleast_2d(P))

    def exact_grad_psi(self, P, t):
        return t * t * _shape_grad_psi(np.atleast_2d(P))

    def body_force(self, P, t):
        P = np.atleast_2d(P)
        inertial = benchmark_rho(P)[:, None] * self.exact_u_tt(P, t)
        return (
            inertial
            - _theta(t) * _elastic_divergence(P)
            - t * t * _coupling_divergence_psi(P)
        )

    def charge(self, P, t):
        """Volume source of the electrostatic equation, -div d."""
        P = np.atleast_2d(P)
        div_d = _theta(t) * _coupling_divergence_u(P) - t * t * np.einsum(
            "jk,njk->n", BENCHMARK_DIELECTRIC, _shape_hess_psi(P)
        )
        return -div_d

    def traction(self, P, t, normals):
        """(C eps(u) + E grad psi) n on the boundary."""
        P = np.atleast_2d(P)
        G = self.exact_grad_u(P, t)
        eps = 0.5 * (G + np.swapaxes(G, 1, 2))
        divu = np.einsum("ncc->n", G)
        mu = benchmark_mu(P)
        lam = benchmark_lambda(P)
        sigma = 2.0 * mu[:, None, None] * eps
        sigma[:, 0, 0] += lam * divu
        sigma[:, 1, 1] += lam * divu
        sigma[:, 2, 2] += lam * divu
        sigma += np.einsum("ijk,nk->nij", _E_FULL, self.exact_grad_psi(P, t))
        return np.einsum("nij,nj->ni", sigma, normals)

    def flux(self, P, t, normals):
        """(E^T eps(u) - kappa grad psi) . n on the boundary."""
        P = np.atleast_2d(P)
        G = self.exact_grad_u(P, t)
        eps = 0.5 * (G + np.swapaxes(G, 1, 2))
        d = np.einsum("ijk,nij->nk", _E_FULL, eps) - np.einsum(
            "jk,nk->nj", BENCHMARK_DIELECTRIC, self.exact_grad_psi(P, t)
        )
        return np.einsum("nj,nj->n", d, normals)

    def dirichlet(self, P, t):
        return self.exact_u(P, t)

    def dirichlet_t(self, P, t):
        return self.exact_u_t(P, t)

    def dirichlet_tt(self, P, t):
        return self.exact_u_tt(P, t)

    def sources(self) -> Sources:
        return Sources(
            body_force=self.body_force,
            charge=self.charge,
            dirichlet=self.dirichlet,
            dirichlet_t=self.dirichlet_t,
            dirichlet_tt=self.dirichlet_tt,
            traction=self.traction,
            flux=self.flux,
        )


def strong_form_residual(case: ManufacturedCase, P, t, h=1e-5, h_t=1e-4):
    """Finite-difference check of the hand-derived volume sources.

    Applies the momentum and charge operators to the exact fields with
    central differences in space and time and subtracts the closures.
    Returns the maximum absolute residual; used once in the test suite
    to validate the derivation.
    """
    P = np.atleast_2d(P)

    def sigma_at(Q, tt):
        G = case.exact_grad_u(Q, tt)
        eps = 0.5 * (G + np.swapaxes(G, 1, 2))
        divu = np.einsum("ncc->n", G)
        mu = benchmark_mu(Q)
        lam = benchmark_lambda(Q)
        s = 2.0 * mu[:, None, None] * eps
        for c in range(3):
            s[:, c, c] += lam * divu
        s += np.einsum("ijk,nk->nij", _E_FULL, case.exact_grad_psi(Q, tt))
        return s

    def dvec_at(Q, tt):
        G = case.exact_grad_u(Q, tt)
        eps = 0.5 * (G + np.swapaxes(G, 1, 2))
        return np.einsum("ijk,nij->nk", _E_FULL, eps) - np.einsum(
            "jk,nk->nj", BENCHMARK_DIELECTRIC, case.exact_grad_psi(Q, tt)
        )

    div_sigma = np.zeros((P.shape[0], 3))
    div_d = np.zeros(P.shape[0])
    for a in range(3):
        dP = np.zeros_like(P)
        dP[:, a] = h
        div_sigma += (sigma_at(P + dP, t)[:, :, a] - sigma_at(P - dP, t)[:, :, a]) / (
            2 * h
        )
        div_d += (dvec_at(P + dP, t)[:, a] - dvec_at(P - dP, t)[:, a]) / (2 * h)

    u_tt = (
        case.exact_u(P, t + h_t) - 2 * case.exact_u(P, t) + case.exact_u(P, t - h_t)
    ) / (h_t * h_t)
    mom = benchmark_rho(P)[:, None] * u_tt - div_sigma - case.body_force(P, t)
    chg = div_d + case.charge(P, t)
    return max(np.abs(mom).max(), np.abs(chg).max())


# ---------------------------------------------------------------------------
# desired states of the control experiments


def tracking_desired_state(P, t):
    """Desired displacement with every component t^2 y (y-1)(x+y+z)."""
    P = np.atleast_2d(P)
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    val = t * t * y * (y - 1.0) * (x + y + z)
    return np.stack([val, val, val], axis=1)


def twist_desired_state(P, t):
    """Desired displacement of the twist simulation.

    Window T1 rotates the cube about the vertical axis proportionally to
    height while T2 stretches and releases it vertically; the bottom
    face stays fixed.
    """
    P = np.atleast_2d(P)
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    t1 = float(smooth_heaviside(2.0 * t - 0.4))
    t2 = float(smooth_heaviside(t - 0.2) * smooth_heaviside(2.7 - t))
    return np.stack(
        [t1 * (0.5 - y) * z, t1 * (x - 0.5) * z, t2 * 2.0 * z], axis=1
    )
