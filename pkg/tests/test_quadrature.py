import numpy as np
import pytest

from piezoctrl.quadrature import (
    simplex_monomial_integral,
    tetrahedron_rule,
    triangle_rule,
)


@pytest.mark.parametrize("degree", [1, 2, 4, 6, 8])
def test_tet_rule_integrates_monomials_exactly(degree):
    rule = tetrahedron_rule(degree)
    assert rule.degree >= degree
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                val = float(
                    rule.weights
                    @ (
                        rule.points[:, 0] ** a
                        * rule.points[:, 1] ** b
                        * rule.points[:, 2] ** c
                    )
                )
                exact = simplex_monomial_integral((a, b, c))
                assert abs(val - exact) < 1e-14


@pytest.mark.parametrize("degree", [1, 3, 6, 8])
def test_triangle_rule_integrates_monomials_exactly(degree):
    rule = triangle_rule(degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            val = float(
                rule.weights @ (rule.points[:, 0] ** a * rule.points[:, 1] ** b)
            )
            exact = simplex_monomial_integral((a, b))
            assert abs(val - exact) < 1e-14


def test_points_inside_reference_simplices():
    tet = tetrahedron_rule(6)
    assert np.all(tet.points >= 0)
    assert np.all(tet.points.sum(axis=1) <= 1 + 1e-14)
    tri = triangle_rule(6)
    assert np.all(tri.points >= 0)
    assert np.all(tri.points.sum(axis=1) <= 1 + 1e-14)


def test_weights_sum_to_simplex_measure():
    assert abs(tetrahedron_rule(4).weights.sum() - 1.0 / 6.0) < 1e-15
    assert abs(triangle_rule(4).weights.sum() - 0.5) < 1e-15
