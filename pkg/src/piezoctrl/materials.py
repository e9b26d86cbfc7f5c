"""Constitutive tensor fields in Voigt notation.

Symmetric 3x3 tensors are encoded as 6-vectors with index pairs
(11, 22, 33, 23, 13, 12). Strains use the engineering convention (shear
entries doubled) and stresses the plain one, so dot products of the two
encodings reproduce Frobenius products of the underlying tensors. The
6x6 stiffness and the 6x3 coupling matrix act between those encodings:
stiffness maps engineering strain to stress, the coupling matrix maps an
electric-field vector to a stress-form 6-vector, and its transpose maps
an engineering strain to a vector, which makes the adjoint identity
(E^T A) . b = A : (E b) a plain matrix transpose.

All fields are pure functions of position evaluated on (n, 3) arrays of
points, hence safe for concurrent use.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


class MaterialError(Exception):
    """Raised when a sampled field violates its positivity contract."""


@dataclass(frozen=True)
class MaterialSet:
    """Spatially varying density, stiffness, coupling and permittivity.

    rho(P) -> (n,), stiffness(P) -> (n, 6, 6), piezo(P) -> (n, 6, 3),
    dielectric(P) -> (n, 3, 3) for P of shape (n, 3).
    """

    rho: Callable
    stiffness: Callable
    piezo: Callable
    dielectric: Callable
    name: str = "custom"

    def check_at(self, points, rho_min=0.0):
        """Verify symmetry and definiteness at sample points (debug aid)."""
        pts = np.atleast_2d(points)
        r = self.rho(pts)
        if np.any(r <= rho_min):
            raise MaterialError("density is not strictly positive at a sample point")
        C = self.stiffness(pts)
        K = self.dielectric(pts)
        if not np.allclose(C, np.swapaxes(C, 1, 2), atol=1e-12):
            raise MaterialError("stiffness matrix is not symmetric")
        if not np.allclose(K, np.swapaxes(K, 1, 2), atol=1e-12):
            raise MaterialError("dielectric matrix is not symmetric")
        for name, A in (("stiffness", C), ("dielectric", K)):
            ev = np.linalg.eigvalsh(A)
            if np.any(ev <= 0.0):
                raise MaterialError(f"{name} matrix is not positive definite at a sample point")
        return self


@dataclass(frozen=True)
class IsotropicElasticity:
    """Lame fields for C eps = 2 mu eps + lambda tr(eps) I."""

    lam: Callable
    mu: Callable

    def stiffness(self) -> Callable:
        def field(points):
            pts = np.atleast_2d(points)
            lam = np.asarray(self.lam(pts), dtype=float)
            mu = np.asarray(self.mu(pts), dtype=float)
            C = np.zeros((pts.shape[0], 6, 6))
            C[:, :3, :3] = lam[:, None, None]
            for i in range(3):
                C[:, i, i] += 2.0 * mu
                C[:, 3 + i, 3 + i] = mu
            return C

        return field


def constant_matrix_field(matrix) -> Callable:
    mat = np.asarray(matrix, dtype=float)

    def field(points):
        pts = np.atleast_2d(points)
        return np.broadcast_to(mat, (pts.shape[0],) + mat.shape).copy()

    return field


def constant_scalar_field(value) -> Callable:
    val = float(value)

    def field(points):
        pts = np.atleast_2d(points)
        return np.full(pts.shape[0], val)

    return field


# Benchmark coefficients used throughout the verification experiments.
# They are chosen for testing convenience, not physical fidelity.
BENCHMARK_DIELECTRIC = np.array(
    [[19.0, 8.0, 7.0], [8.0, 19.0, 5.0], [7.0, 5.0, 17.0]]
)
BENCHMARK_PIEZO = np.array(
    [
        [2.0, 1.0, 4.0],
        [2.0, 2.0, 1.0],
        [3.0, 6.0, 3.0],
        [5.0, 3.0, 3.0],
        [2.0, 2.0, 1.0],
        [3.0, 1.0, 3.0],
    ]
)


def benchmark_rho(points):
    pts = np.atleast_2d(points)
    return 1.0 + np.abs(pts[:, 0]) + np.abs(pts[:, 1])


def benchmark_lambda(points):
    pts = np.atleast_2d(points)
    return 1.0 + 1.0 / (1.0 + (pts**2).sum(axis=1))


def benchmark_mu(points):
    pts = np.atleast_2d(points)
    return 3.0 + np.cos(pts[:, 0] * pts[:, 1] * pts[:, 2])


def paper_benchmark_materials() -> MaterialSet:
    """The non-homogeneous benchmark preset.

    rho = 1 + |x| + |y|, isotropic stiffness with
    lambda = 1 + 1/(1 + |x|^2) and mu = 3 + cos(xyz), a constant 6x3
    coupling matrix and a constant SPD dielectric matrix.
    """
    iso = IsotropicElasticity(benchmark_lambda, benchmark_mu)
    return MaterialSet(
        rho=benchmark_rho,
        stiffness=iso.stiffness(),
        piezo=constant_matrix_field(BENCHMARK_PIEZO),
        dielectric=constant_matrix_field(BENCHMARK_DIELECTRIC),
        name="paper_benchmark",
    )


def voigt_strain(displacement_gradient) -> np.ndarray:
    """Engineering-strain 6-vector of 1/2 (G + G^T).

    Accepts a single 3x3 gradient or a stacked (n, 3, 3) array.
    """
    G = np.asarray(displacement_gradient, dtype=float)
    single = G.ndim == 2
    if single:
        G = G[None]
    eps = 0.5 * (G + np.swapaxes(G, -1, -2))
    out = np.empty(G.shape[:-2] + (6,))
    out[..., 0] = eps[..., 0, 0]
    out[..., 1] = eps[..., 1, 1]
    out[..., 2] = eps[..., 2, 2]
    out[..., 3] = 2.0 * eps[..., 1, 2]
    out[..., 4] = 2.0 * eps[..., 0, 2]
    out[..., 5] = 2.0 * eps[..., 0, 1]
    return out[0] if single else out


def tensor_from_stress_voigt(s) -> np.ndarray:
    """Symmetric 3x3 tensor from a stress-form 6-vector."""
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    if single:
        s = s[None]
    T = np.empty(s.shape[:-1] + (3, 3))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        T[..., i, j] = s[..., I]
        T[..., j, i] = s[..., I]
    return T[0] if single else T


def piezo_full_tensor(piezo_voigt) -> np.ndarray:
    """Expand a 6x3 coupling matrix to the 3x3x3 tensor e[i,j,k]."""
    E = np.asarray(piezo_voigt, dtype=float)
    e = np.empty((3, 3, 3))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        e[i, j, :] = E[I]
        e[j, i, :] = E[I]
    return e
