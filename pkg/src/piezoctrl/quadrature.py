"""Gauss-Jacobi quadrature on the reference tetrahedron and triangle.

Rules are built by the conical-product (Duffy) construction: tensor
products of one-dimensional Gauss-Jacobi rules whose weight functions
absorb the collapsed-coordinate Jacobian, so a rule with n points per
axis integrates polynomials of total degree 2n - 1 exactly.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on a reference simplex.

    ``points`` has shape (nq, dim) and the weights sum to the measure of
    the reference simplex (1/6 for the tetrahedron, 1/2 for the triangle).
    ``degree`` is the guaranteed polynomial exactness.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return self.weights.size


def _points_per_axis(degree):
    if degree < 0:
        raise ValueError(f"quadrature degree must be nonnegative, got {degree}")
    return degree // 2 + 1


def tetrahedron_rule(degree: int) -> QuadratureRule:
    """Rule on the unit tetrahedron {x,y,z >= 0, x+y+z <= 1}."""
    n = _points_per_axis(degree)
    xa, wa = roots_jacobi(n, 0.0, 0.0)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    xc, wc = roots_jacobi(n, 2.0, 0.0)

    pts = np.empty((n**3, 3))
    wts = np.empty(n**3)
    idx = 0
    for c, vc in zip(xc, wc):
        for b, vb in zip(xb, wb):
            for a, va in zip(xa, wa):
                z = 0.5 * (1.0 + c)
                y = 0.5 * (1.0 + b) * (1.0 - z)
                x = 0.5 * (1.0 + a) * (1.0 - y - z)
                pts[idx] = (x, y, z)
                # Jacobi weights carry (1-xb) and (1-xc)^2; 1/64 collects
                # the interval-halving factors of the collapsed map.
                wts[idx] = va * vb * vc / 64.0
                idx += 1
    return QuadratureRule(pts, wts, 2 * n - 1)


def triangle_rule(degree: int) -> QuadratureRule:
    """Rule on the unit triangle {x,y >= 0, x+y <= 1}."""
    n = _points_per_axis(degree)
    xa, wa = roots_jacobi(n, 0.0, 0.0)
    xb, wb = roots_jacobi(n, 1.0, 0.0)

    pts = np.empty((n**2, 2))
    wts = np.empty(n**2)
    idx = 0
    for b, vb in zip(xb, wb):
        for a, va in zip(xa, wa):
            y = 0.5 * (1.0 + b)
            x = 0.5 * (1.0 + a) * (1.0 - y)
            pts[idx] = (x, y)
            wts[idx] = va * vb / 8.0
            idx += 1
    return QuadratureRule(pts, wts, 2 * n - 1)


def simplex_monomial_integral(exponents) -> float:
    """Exact integral of x^a * y^b * ... over the unit simplex.

    Evaluates prod(a_i!) / (sum(a_i) + dim)! without overflowing, used as
    the reference value in exactness checks.
    """
    exponents = tuple(int(e) for e in exponents)
    dim = len(exponents)
    val = 1.0
    total = sum(exponents) + dim
    # prod a_i! / total! computed as a running ratio
    denom_terms = list(range(1, total + 1))
    num_terms = []
    for a in exponents:
        num_terms.extend(range(1, a + 1))
    for t in num_terms:
        val *= t
    for t in denom_terms:
        val /= t
    return val
