"""Brute-force evaluation of the bilinear forms, entry by entry.

Everything here works with full 2x2 matrices, finds edges and normals from
the vertex coordinates, integrates with plain Gauss-Legendre products and
differentiates by central differences (exact for the quadratic and lower
degree polynomials it is used on). Only the scalar basis values are shared
with the package.
"""
import itertools

import numpy as np

from mdgbrinkman.spaces import eval_scalar_basis, scalar_dim

SYM = [np.array([[1.0, 0.0], [0.0, 0.0]]),
       np.array([[0.0, 1.0], [1.0, 0.0]]),
       np.array([[0.0, 0.0], [0.0, 1.0]])]
VEC = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
FD_STEP = 0.25


def _gauss01(m):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_points(verts, m=8):
    """Physical points and weights of a collapsed Gauss-Legendre product rule."""
    s, ws = _gauss01(m)
    v0, v1, v2 = (np.asarray(v, float) for v in verts)
    d1, d2 = v1 - v0, v2 - v0
    area2 = abs(d1[0] * d2[1] - d1[1] * d2[0])
    pts, wts = [], []
    for a, wa in zip(s, ws):
        for b, wb in zip(s, ws):
            xi, eta = a * (1 - b), b
            pts.append(v0 + xi * (v1 - v0) + eta * (v2 - v0))
            wts.append(wa * wb * (1 - b) * area2)
    return np.array(pts), np.array(wts)


class CellPoly:
    """Scalar basis function ``b`` of degree ``k`` on one triangle, extended
    polynomially outside it."""

    def __init__(self, verts, k, b):
        self.v0 = np.asarray(verts[0], float)
        self.J = np.column_stack([np.subtract(verts[1], verts[0]), np.subtract(verts[2], verts[0])])
        self.k, self.b = k, b

    def __call__(self, x):
        ref = np.linalg.solve(self.J, np.asarray(x, float) - self.v0)
        return float(eval_scalar_basis(self.k, ref[None, :])[0][self.b, 0])

    def grad(self, x):
        x = np.asarray(x, float)
        e = np.eye(2) * FD_STEP
        return np.array([(self(x + e[i]) - self(x - e[i])) / (2 * FD_STEP) for i in range(2)])


def _dev(T):
    return T - 0.5 * np.trace(T) * np.eye(2)


class Forms:
    """Global basis of the stress / velocity pair on a list of triangles."""

    def __init__(self, vertices, cells, k):
        self.verts = [np.asarray(vertices)[list(c)] for c in cells]
        self.k = k
        self.nbs, self.nbu = scalar_dim(k + 1), scalar_dim(k)
        # (cell, tensor, poly) per stress dof and (cell, vector, poly) per velocity dof
        self.sigma_dofs = [(c, SYM[j], CellPoly(v, k + 1, b))
                           for c, v in enumerate(self.verts) for j in range(3) for b in range(self.nbs)]
        self.u_dofs = [(c, VEC[j], CellPoly(v, k, b))
                       for c, v in enumerate(self.verts) for j in range(2) for b in range(self.nbu)]
        self.interior, self.boundary = self._edges(cells)

    def _edges(self, cells):
        owners = {}
        for c, tri in enumerate(cells):
            for a, b in itertools.combinations(tri, 2):
                owners.setdefault(frozenset((a, b)), []).append(c)
        interior, boundary = [], []
        for key, cs in owners.items():
            a, b = sorted(key)
            seg = self.verts[cs[0]]
            pa = next(p for p, i in zip(seg, cells[cs[0]]) if i == a)
            pb = next(p for p, i in zip(seg, cells[cs[0]]) if i == b)
            t = pb - pa
            n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
            centroid = self.verts[cs[0]].mean(axis=0)
            if n @ (centroid - pa) > 0:
                n = -n
            (interior if len(cs) == 2 else boundary).append((pa, pb, n, sorted(cs)))
        return interior, boundary

    # pointwise field values; zero off the owning cell
    @staticmethod
    def tensor(dof, cell, x):
        c, E, p = dof
        return E * p(x) if c == cell else np.zeros((2, 2))

    @staticmethod
    def vector(dof, cell, x):
        c, e, p = dof
        return e * p(x) if c == cell else np.zeros(2)

    @staticmethod
    def div(dof, cell, x):
        c, E, p = dof
        return E @ p.grad(x) if c == cell else np.zeros(2)

    def _edge_rule(self, pa, pb, m=8):
        t, w = _gauss01(m)
        h = np.linalg.norm(pb - pa)
        return [pa + ti * (pb - pa) for ti in t], w * h, h

    def A(self, eta=1.0):
        n = len(self.sigma_dofs)
        out = np.zeros((n, n))
        for c, verts in enumerate(self.verts):
            pts, wts = triangle_points(verts)
            for x, w in zip(pts, wts):
                D = [_dev(self.tensor(d, c, x)) for d in self.sigma_dofs]
                for i, j in itertools.product(range(n), repeat=2):
                    out[i, j] += 0.5 * w * np.sum(D[i] * D[j])
        for pa, pb, nrm, (cp, cm) in self.interior:
            xs, ws, h = self._edge_rule(pa, pb)
            for x, w in zip(xs, ws):
                J = [(self.tensor(d, cp, x) - self.tensor(d, cm, x)) @ nrm for d in self.sigma_dofs]
                for i, j in itertools.product(range(n), repeat=2):
                    out[i, j] += eta / h * w * J[i] @ J[j]
        return out

    def B(self):
        ns, nu = len(self.sigma_dofs), len(self.u_dofs)
        out = np.zeros((nu, ns))
        for c, verts in enumerate(self.verts):
            pts, wts = triangle_points(verts)
            for x, w in zip(pts, wts):
                dv = [self.div(d, c, x) for d in self.sigma_dofs]
                vv = [self.vector(v, c, x) for v in self.u_dofs]
                for l, j in itertools.product(range(nu), range(ns)):
                    out[l, j] += w * dv[j] @ vv[l]
        for pa, pb, nrm, (cp, cm) in self.interior:
            xs, ws, _ = self._edge_rule(pa, pb)
            for x, w in zip(xs, ws):
                jump = [(self.tensor(d, cp, x) - self.tensor(d, cm, x)) @ nrm for d in self.sigma_dofs]
                avg = [0.5 * (self.vector(v, cp, x) + self.vector(v, cm, x)) for v in self.u_dofs]
                for l, j in itertools.product(range(nu), range(ns)):
                    out[l, j] -= w * jump[j] @ avg[l]
        return out

    def S(self, kappa_inv):
        nu = len(self.u_dofs)
        out = np.zeros((nu, nu))
        for c, verts in enumerate(self.verts):
            pts, wts = triangle_points(verts)
            for x, w in zip(pts, wts):
                k = float(kappa_inv(x[0], x[1]))
                for i, j in itertools.product(range(nu), repeat=2):
                    out[i, j] += w * k * self.vector(self.u_dofs[i], c, x) @ self.vector(self.u_dofs[j], c, x)
        return out

    def c(self):
        out = np.zeros(len(self.sigma_dofs))
        for c, verts in enumerate(self.verts):
            pts, wts = triangle_points(verts)
            for x, w in zip(pts, wts):
                for i, d in enumerate(self.sigma_dofs):
                    out[i] += w * np.trace(self.tensor(d, c, x))
        return out

    def G(self, g):
        out = np.zeros(len(self.sigma_dofs))
        for pa, pb, nrm, (c,) in self.boundary:
            xs, ws, _ = self._edge_rule(pa, pb)
            for x, w in zip(xs, ws):
                gx = np.asarray(g(x[0], x[1]), float)
                for i, d in enumerate(self.sigma_dofs):
                    out[i] += w * (self.tensor(d, c, x) @ nrm) @ gx
        return out

    def F(self, f):
        out = np.zeros(len(self.u_dofs))
        for c, verts in enumerate(self.verts):
            pts, wts = triangle_points(verts)
            for x, w in zip(pts, wts):
                fx = np.asarray(f(x[0], x[1]), float)
                for i, d in enumerate(self.u_dofs):
                    out[i] += w * self.vector(d, c, x) @ fx
        return out


def two_cell_mesh():
    """The unit square cut along its rising diagonal."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    cells = [(0, 1, 3), (0, 3, 2)]
    return vertices, cells


def fd_sigma(exact, nu, x, y, h=1e-5):
    """sigma = 2 nu eps(u) - p I from central differences of u."""
    du_dx = (exact.u(x + h, y) - exact.u(x - h, y)) / (2 * h)
    du_dy = (exact.u(x, y + h) - exact.u(x, y - h)) / (2 * h)
    p = exact.p(x, y)
    return np.stack([2 * nu * du_dx[..., 0] - p, nu * (du_dy[..., 0] + du_dx[..., 1]),
                     2 * nu * du_dy[..., 1] - p], axis=-1)


def fd_source(exact, kappa_inv, nu, x, y, h=1e-5):
    """f = nu kappa^-1 u - div sigma with the row-wise divergence taken by
    central differences of the stress closure."""
    sx = (exact.sigma(x + h, y, nu) - exact.sigma(x - h, y, nu)) / (2 * h)
    sy = (exact.sigma(x, y + h, nu) - exact.sigma(x, y - h, nu)) / (2 * h)
    div = np.stack([sx[..., 0] + sy[..., 1], sx[..., 1] + sy[..., 2]], axis=-1)
    return nu * kappa_inv(x, y)[..., None] * exact.u(x, y) - div
