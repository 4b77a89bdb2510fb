"""Broken polynomial spaces on triangles.

The scalar basis is the Dubiner (Proriol-Koornwinder) basis, orthonormal on
the reference triangle (0,0), (1,0), (0,1) and hierarchical in the degree.
Symmetric 2x2 tensors are stored as ``(t11, t12, t22)`` along the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import eval_jacobi, gammaln

from .mesh import Mesh

MAX_BASIS_DEGREE = 5

KINDS = {"scalar": 1, "vector": 2, "symtensor": 3}

# basis tensors E_11, E_12 + E_21, E_22 for the symmetric components
SYM_BASIS = np.array([[[1.0, 0.0], [0.0, 0.0]],
                      [[0.0, 1.0], [1.0, 0.0]],
                      [[0.0, 0.0], [0.0, 1.0]]])


def scalar_dim(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def mode_ids(k: int) -> list[tuple[int, int]]:
    return [(i, p - i) for p in range(k + 1) for i in range(p + 1)]


def _jacobi(n, a, b, x):
    """Jacobi polynomial normalized to unit norm under (1-x)^a (1+x)^b."""
    log_h = ((a + b + 1) * np.log(2.0) - np.log(2 * n + a + b + 1)
             + gammaln(n + a + 1) + gammaln(n + b + 1)
             - gammaln(n + a + b + 1) - gammaln(n + 1))
    return eval_jacobi(n, a, b, x) * np.exp(-0.5 * log_h)


def _djacobi(n, a, b, x):
    if n == 0:
        return np.zeros_like(x)
    return np.sqrt(n * (n + a + b + 1.0)) * _jacobi(n - 1, a + 1, b + 1, x)


def eval_scalar_basis(k: int, points) -> tuple[np.ndarray, np.ndarray]:
    """Values (nb, npts) and reference gradients (nb, npts, 2) of the basis."""
    if int(k) != k or not 0 <= k <= MAX_BASIS_DEGREE:
        raise ValueError(f"unsupported basis degree {k!r}; supported: 0..{MAX_BASIS_DEGREE}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = 2.0 * pts[:, 0] - 1.0
    s = 2.0 * pts[:, 1] - 1.0
    one_minus_b = 1.0 - s
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(np.abs(one_minus_b) > 1e-12, 2.0 * (1.0 + r) / one_minus_b - 1.0, -1.0)
    b = s

    values = np.empty((scalar_dim(k), len(pts)))
    grads = np.empty((scalar_dim(k), len(pts), 2))
    half = 0.5 * one_minus_b
    for m, (i, j) in enumerate(mode_ids(k)):
        fa, dfa = _jacobi(i, 0, 0, a), _djacobi(i, 0, 0, a)
        gb, dgb = _jacobi(j, 2 * i + 1, 0, b), _djacobi(j, 2 * i + 1, 0, b)
        # sqrt(2) normalizes on the biunit triangle; factor 2 rescales to area 1/2
        scale = 2.0 * np.sqrt(2.0) * 2.0 ** i
        values[m] = scale * fa * gb * half ** i
        hp = half ** (i - 1) if i else 1.0
        d_dr = dfa * gb * hp
        d_ds = dfa * gb * 0.5 * (1.0 + a) * hp + fa * dgb * half ** i
        if i:
            d_ds = d_ds - 0.5 * i * fa * gb * hp
        # d/dx = 2 d/dr, d/dy = 2 d/ds
        grads[m, :, 0] = 2.0 * scale * d_dr
        grads[m, :, 1] = 2.0 * scale * d_ds
    return values, grads


# pointwise tensor algebra, last axis (t11, t12, t22)

def trace(t):
    t = np.asarray(t, dtype=float)
    return t[..., 0] + t[..., 2]


def deviatoric(t):
    t = np.asarray(t, dtype=float)
    m = 0.5 * trace(t)
    return np.stack([t[..., 0] - m, t[..., 1], t[..., 2] - m], axis=-1)


def contract(t, z):
    """Full contraction ``t : z`` of symmetric tensors."""
    t, z = np.asarray(t, dtype=float), np.asarray(z, dtype=float)
    return t[..., 0] * z[..., 0] + 2.0 * t[..., 1] * z[..., 1] + t[..., 2] * z[..., 2]


def normal_action(t, n):
    t, n = np.asarray(t, dtype=float), np.asarray(n, dtype=float)
    return np.stack([t[..., 0] * n[..., 0] + t[..., 1] * n[..., 1],
                     t[..., 1] * n[..., 0] + t[..., 2] * n[..., 1]], axis=-1)


def to_matrix(t):
    t = np.asarray(t, dtype=float)
    return np.stack([np.stack([t[..., 0], t[..., 1]], -1),
                     np.stack([t[..., 1], t[..., 2]], -1)], -2)


def frobenius(t):
    return np.sqrt(np.maximum(contract(t, t), 0.0))


@dataclass(frozen=True, eq=False)
class DGSpace:
    """Discontinuous piecewise polynomials of total ``degree`` on ``mesh``.

    Dofs of cell ``c`` occupy ``[c*dofs_per_cell, (c+1)*dofs_per_cell)``,
    component-major: component ``j`` owns local slots ``j*nb .. (j+1)*nb - 1``.
    """

    mesh: Mesh
    degree: int
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown component kind {self.kind!r}")
        if int(self.degree) != self.degree or not 0 <= self.degree <= MAX_BASIS_DEGREE:
            raise ValueError(f"unsupported degree {self.degree!r}")

    @property
    def components(self) -> int:
        return KINDS[self.kind]

    @property
    def scalar_dim(self) -> int:
        return scalar_dim(self.degree)

    @property
    def dofs_per_cell(self) -> int:
        return self.components * self.scalar_dim

    @property
    def num_dofs(self) -> int:
        return self.mesh.num_cells * self.dofs_per_cell

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(self.mesh.num_cells) * self.dofs_per_cell

    def cell_dofs(self, cells=None) -> np.ndarray:
        cells = np.arange(self.mesh.num_cells) if cells is None else np.asarray(cells)
        return cells[..., None] * self.dofs_per_cell + np.arange(self.dofs_per_cell)

    def tabulate(self, ref_points):
        """Component-resolved basis values (ndofs_loc, npts, ncomp) and
        reference gradients (ndofs_loc, npts, ncomp, 2)."""
        phi, dphi = eval_scalar_basis(self.degree, ref_points)
        nb, nc = self.scalar_dim, self.components
        vals = np.zeros((nc * nb, phi.shape[1], nc))
        grads = np.zeros((nc * nb, phi.shape[1], nc, 2))
        for j in range(nc):
            vals[j * nb:(j + 1) * nb, :, j] = phi
            grads[j * nb:(j + 1) * nb, :, j, :] = dphi
        return vals, grads


@dataclass(eq=False)
class FieldCoefficients:
    space: DGSpace
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros(self.space.num_dofs)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.num_dofs,):
            raise ValueError(f"expected {self.space.num_dofs} coefficients, got {self.values.shape}")

    @property
    def cellwise(self) -> np.ndarray:
        return self.values.reshape(self.space.mesh.num_cells, self.space.dofs_per_cell)

    def evaluate(self, ref_points, cells=None):
        """Values, physical gradients of each component and derived quantities.

        Returns a dict with ``values`` (C, npts, ncomp) and ``grad``
        (C, npts, ncomp, 2); symmetric tensors add ``div`` (C, npts, 2) and
        vectors add ``strain`` (C, npts, 3).
        """
        space = self.space
        cells = np.arange(space.mesh.num_cells) if cells is None else np.atleast_1d(cells)
        vals, grads = space.tabulate(np.atleast_2d(ref_points))
        coef = self.cellwise[cells]
        out = {"values": np.einsum("cm,mqj->cqj", coef, vals)}
        ref_grad = np.einsum("cm,mqjd->cqjd", coef, grads)
        grad = np.einsum("cqjd,cde->cqje", ref_grad, np.swapaxes(space.mesh.inv_T[cells], 1, 2))
        out["grad"] = grad
        if space.kind == "symtensor":
            # row-wise divergence: (d1 t11 + d2 t12, d1 t12 + d2 t22)
            out["div"] = np.stack([grad[..., 0, 0] + grad[..., 1, 1],
                                   grad[..., 1, 0] + grad[..., 2, 1]], axis=-1)
        elif space.kind == "vector":
            out["strain"] = np.stack([grad[..., 0, 0],
                                      0.5 * (grad[..., 0, 1] + grad[..., 1, 0]),
                                      grad[..., 1, 1]], axis=-1)
        return out


    def values_at(self, cells, points) -> np.ndarray:
        """Values at physical ``points`` (E, q, 2), each row taken from the
        polynomial of ``cells[e]``; returns (E, q, ncomp)."""
        space = self.space
        cells = np.asarray(cells)
        points = np.asarray(points, dtype=float)
        ref = space.mesh.map_to_reference(cells, points)
        phi, _ = eval_scalar_basis(space.degree, ref.reshape(-1, 2))
        phi = phi.reshape(space.scalar_dim, *points.shape[:2])
        coef = self.cellwise[cells].reshape(len(cells), space.components, space.scalar_dim)
        return np.einsum("ejb,beq->eqj", coef, phi)

    def scaled(self, factor: float) -> "FieldCoefficients":
        return FieldCoefficients(self.space, factor * self.values)


def eval_field(coeffs: FieldCoefficients, cell: int, ref_points):
    """Single-cell convenience wrapper around :meth:`FieldCoefficients.evaluate`."""
    out = coeffs.evaluate(ref_points, cells=[cell])
    return {key: val[0] for key, val in out.items()}


def interpolate(space: DGSpace, func, quad_degree: int | None = None) -> FieldCoefficients:
    """Cellwise L2 projection of ``func(x, y) -> (..., ncomp)`` onto ``space``."""
    from .quadrature import triangle_rule

    rule = triangle_rule(quad_degree if quad_degree is not None else 2 * space.degree + 4)
    phys = space.mesh.map_to_physical(rule.points)
    f = np.asarray(func(phys[..., 0], phys[..., 1]), dtype=float)
    if space.components == 1 and f.ndim == 2:
        f = f[..., None]
    phi, _ = eval_scalar_basis(space.degree, rule.points)
    # orthonormal reference basis: the det_K factors of mass matrix and load cancel
    proj = np.einsum("cqj,bq,q->cjb", f, phi, rule.weights)
    return FieldCoefficients(space, proj.reshape(space.mesh.num_cells, -1).ravel())
