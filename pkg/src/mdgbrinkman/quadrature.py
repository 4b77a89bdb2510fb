"""Gauss rules on the unit interval and the reference triangle.

The triangle rules are collapsed (Duffy) products of Gauss-Legendre and
Gauss-Jacobi(1, 0) points: all points are interior and all weights positive.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 40


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray    # (npts, dim)
    weights: np.ndarray   # (npts,)
    exactness_degree: int

    def __len__(self):
        return len(self.weights)


def _check_degree(degree):
    if int(degree) != degree or not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree!r}; supported: 0..{MAX_DEGREE}")
    return int(degree)


@lru_cache(maxsize=None)
def interval_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    degree = _check_degree(degree)
    m = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(m)
    return QuadratureRule(0.5 * (x + 1.0)[:, None], 0.5 * w, 2 * m - 1)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Rule on the triangle (0,0), (1,0), (0,1) exact for total ``degree``."""
    degree = _check_degree(degree)
    m = degree // 2 + 1
    s, ws = np.polynomial.legendre.leggauss(m)
    t, wt = roots_jacobi(m, 1.0, 0.0)
    u = 0.5 * (s + 1.0)          # along the collapsed direction
    w = 0.5 * (t + 1.0)          # y
    U, W = np.meshgrid(u, w, indexing="ij")
    points = np.column_stack([(U * (1.0 - W)).ravel(), W.ravel()])
    # (1 - w) dw on [0,1] = (1 - t)/4 dt; du = ds/2
    weights = np.outer(0.5 * ws, 0.25 * wt).ravel()
    return QuadratureRule(points, weights, 2 * m - 1)
