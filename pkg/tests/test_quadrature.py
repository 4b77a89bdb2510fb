import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdgbrinkman.quadrature import MAX_DEGREE, interval_rule, triangle_rule


def simplex_moment(a, b):
    """int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def integrate(rule, fn):
    x = rule.points
    return float(rule.weights @ fn(*x.T))


def test_triangle_examples():
    assert integrate(triangle_rule(1), lambda x, y: 1 + 0 * x) == pytest.approx(0.5, rel=1e-15)
    assert integrate(triangle_rule(2), lambda x, y: x) == pytest.approx(1 / 6, rel=1e-14)
    assert integrate(triangle_rule(2), lambda x, y: x * y) == pytest.approx(1 / 24, rel=1e-14)
    assert integrate(triangle_rule(8), lambda x, y: x ** 4 * y ** 4) == pytest.approx(1 / 6300, rel=1e-13)


def test_interval_examples():
    r = interval_rule(1)
    assert r.points[:, 0].tolist() == [0.5] and r.weights.tolist() == [1.0]
    assert len(interval_rule(3)) == 2
    assert integrate(interval_rule(3), lambda t: t ** 3) == pytest.approx(0.25, rel=1e-15)
    assert integrate(interval_rule(5), lambda t: t ** 5) == pytest.approx(1 / 6, rel=1e-15)


@pytest.mark.parametrize("degree", range(0, 21))
def test_triangle_exactness_sweep(degree):
    rule = triangle_rule(degree)
    assert rule.exactness_degree >= degree
    assert np.all(rule.weights > 0)
    assert abs(rule.weights.sum() - 0.5) <= 1e-15
    x, y = rule.points.T
    assert np.all((x > 0) & (y > 0) & (x + y < 1))
    for total in range(rule.exactness_degree + 1):
        for a in range(total + 1):
            b = total - a
            exact = simplex_moment(a, b)
            assert abs(rule.weights @ (x ** a * y ** b) - exact) <= 1e-13 * exact


@pytest.mark.parametrize("degree", range(0, 21))
def test_interval_exactness_sweep(degree):
    rule = interval_rule(degree)
    t = rule.points[:, 0]
    assert np.all(rule.weights > 0) and abs(rule.weights.sum() - 1) <= 1e-15
    for p in range(rule.exactness_degree + 1):
        assert abs(rule.weights @ t ** p - 1 / (p + 1)) <= 1e-13 / (p + 1)


@pytest.mark.parametrize("degree", [-1, MAX_DEGREE + 1, 2.5])
def test_unsupported_degree(degree):
    with pytest.raises(ValueError):
        triangle_rule(degree)
    with pytest.raises(ValueError):
        interval_rule(degree)


@given(st.integers(0, 14), st.integers(0, 14))
def test_random_monomials(a, b):
    rule = triangle_rule(a + b)
    exact = simplex_moment(a, b)
    assert integrate(rule, lambda x, y: x ** a * y ** b) == pytest.approx(exact, rel=1e-13)
