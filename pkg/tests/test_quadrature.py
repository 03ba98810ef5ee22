"""Triangle quadrature rules: exactness against closed-form monomial moments."""

import math

import numpy as np
import pytest

from oseenlg.assembly import reference_moment, triangle_rule


def test_reference_moment_closed_forms():
    # int over the reference triangle of lam^alpha, normalized by the area 1/2
    assert reference_moment(0, 0, 0) == pytest.approx(1.0)
    assert reference_moment(1, 0, 0) == pytest.approx(1.0 / 3.0)
    assert reference_moment(2, 0, 0) == pytest.approx(1.0 / 6.0)
    assert reference_moment(1, 1, 0) == pytest.approx(1.0 / 12.0)
    assert reference_moment(2, 2, 2) == pytest.approx(16.0 / math.factorial(8))


@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13])
def test_monomial_exactness(degree):
    rule = triangle_rule(degree)
    assert abs(rule.weights.sum() - 1.0) < 1e-14
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            c = degree - a - b
            approx = float(np.sum(rule.weights * rule.points[:, 0] ** a
                                  * rule.points[:, 1] ** b * rule.points[:, 2] ** c))
            exact = reference_moment(a, b, c)
            assert abs(approx - exact) <= 5e-14, (degree, a, b, c)


def test_points_inside_reference_triangle():
    for degree in (2, 5, 9, 11):
        rule = triangle_rule(degree)
        assert rule.points.min() >= -1e-14
        assert np.allclose(rule.points.sum(axis=1), 1.0, atol=1e-14)


def test_weights_positive():
    for degree in range(1, 20):
        rule = triangle_rule(degree)
        assert rule.weights.min() > 0.0, degree


def test_degree_three_uses_the_degree_four_table():
    r3 = triangle_rule(3)
    r4 = triangle_rule(4)
    assert np.array_equal(r3.points, r4.points)
    assert np.array_equal(r3.weights, r4.weights)


def test_not_exact_beyond_declared_degree():
    # the 1-point centroid rule must fail on quadratics, as a sanity check
    rule = triangle_rule(1)
    approx = float(np.sum(rule.weights * rule.points[:, 0] ** 2))
    assert abs(approx - reference_moment(2, 0, 0)) > 1e-3


def test_absurd_degree_rejected():
    with pytest.raises(ValueError):
        triangle_rule(61)
    with pytest.raises(ValueError):
        triangle_rule(0)
