"""Sparse assembly of the mixed DG saddle-point system.

Unknowns are ordered ``[sigma; u; lambda]`` and the global matrix is

    [[A,  B^T, c],
     [B,  -S,  0],
     [c^T, 0,  0]]

with right-hand side ``[G; -F; 0]``. On an interior edge with first cell
``K+`` (canonical normal ``n``) and second cell ``K-``,

    [tau] = (tau+ - tau-) n,    {v} = (v+ + v-) / 2,

and boundary edges contribute only to ``G``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .problems import InvalidProblemError
from .quadrature import interval_rule, triangle_rule
from .spaces import SYM_BASIS, DGSpace

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    S: sp.csr_matrix
    c: np.ndarray
    G: np.ndarray
    F: np.ndarray
    eta: float = 1.0
    sigma_block: int = 0           # stress dofs per cell
    u_block: int = 0               # velocity dofs per cell
    identity: np.ndarray | None = None  # coefficients of the constant field I

    @property
    def n_sigma(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.S.shape[0]

    @property
    def size(self) -> int:
        return self.n_sigma + self.n_u + 1

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.G, -self.F, [0.0]])

    def matrix(self) -> sp.csc_matrix:
        c = sp.csr_matrix(self.c[:, None])
        return sp.bmat([[self.A, self.B.T, c],
                        [self.B, -self.S, None],
                        [c.T, None, None]], format="csc")

    def apply(self, x) -> np.ndarray:
        """Product with the global matrix without assembling it."""
        sigma, u, lam = self.split(x)
        return np.concatenate([self.A @ sigma + self.B.T @ u + lam * self.c,
                               self.B @ sigma - self.S @ u, [self.c @ sigma]])

    def split(self, x):
        ns, nu = self.n_sigma, self.n_u
        return x[:ns], x[ns:ns + nu], float(x[ns + nu])


def _sym_tables(space: DGSpace, ref_points):
    """Symmetric-tensor basis as full matrices: values (m, q, 2, 2) and
    reference gradients of the scalar factor (m, q, 2), plus the component
    tensor of each local dof (m, 2, 2)."""
    vals, grads = space.tabulate(ref_points)
    nb = space.scalar_dim
    comp = np.repeat(SYM_BASIS, nb, axis=0)
    phi = vals.sum(axis=2)
    dphi = grads.sum(axis=2)
    return phi, dphi, comp


def _coo(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


# edges per batch in face assembly; bounds the size of the quadrature tables
EDGE_CHUNK = 4096


def _cell_block_matrix(diag, pairs, off) -> sp.csr_matrix:
    """Matrix made of per-cell blocks: ``diag[c]`` at (c, c) and ``off[i]``
    at ``pairs[i]``. Cells share at most one edge, so pairs are unique."""
    ncell, r, c = diag.shape
    br = np.concatenate([np.arange(ncell), pairs[:, 0]])
    bc = np.concatenate([np.arange(ncell), pairs[:, 1]])
    order = np.lexsort((bc, br))
    indptr = np.searchsorted(br[order], np.arange(ncell + 1))
    data = np.concatenate([diag, off])[order]
    return sp.bsr_matrix((data, bc[order], indptr), shape=(ncell * r, ncell * c)).tocsr()


def _face_blocks(mesh: Mesh, diag, local_blocks):
    """Scatter per-edge local matrices (E, 2r, 2c) over interior edges into the
    cell diagonal ``diag`` (in place) and return (pairs, off-diagonal blocks)."""
    edges = mesh.interior_edges
    cells = mesh.edge_cells[edges]
    r, c = diag.shape[1], diag.shape[2]
    off = np.empty((2 * len(edges), r, c))
    for start, chunk in local_blocks:
        stop = start + len(chunk)
        np.add.at(diag, cells[start:stop, 0], chunk[:, :r, :c])
        np.add.at(diag, cells[start:stop, 1], chunk[:, r:, c:])
        off[start:stop] = chunk[:, :r, c:]
        off[len(edges) + start:len(edges) + stop] = chunk[:, r:, :c]
    pairs = np.concatenate([cells, cells[:, ::-1]])
    return pairs, off


def _check_spaces(sigma_space: DGSpace, v_space: DGSpace):
    if sigma_space.kind != "symtensor" or v_space.kind != "vector":
        raise ValueError("expected a symmetric-tensor stress space and a vector velocity space")
    if sigma_space.mesh is not v_space.mesh:
        raise ValueError("stress and velocity spaces live on different meshes")
    if v_space.degree != sigma_space.degree - 1:
        raise ValueError(f"velocity degree must be stress degree - 1, got "
                         f"{v_space.degree} and {sigma_space.degree}")


def _default_degree(space: DGSpace) -> int:
    return 2 * space.degree + 2


def interior_edge_traces(mesh: Mesh, space: DGSpace, t: np.ndarray, edges: np.ndarray | None = None):
    """Values of the scalar basis on both sides of interior edges at edge
    parameters ``t``: arrays (E, nb, q) for the first and second cell."""
    from .spaces import eval_scalar_basis

    edges = mesh.interior_edges if edges is None else edges
    a, b = mesh.vertices[mesh.edge_vertices[edges]].transpose(1, 0, 2)
    x = a[:, None, :] * (1.0 - t)[None, :, None] + b[:, None, :] * t[None, :, None]
    out = []
    for side in (0, 1):
        cells = mesh.edge_cells[edges, side]
        ref = mesh.map_to_reference(cells, x)
        phi, _ = eval_scalar_basis(space.degree, ref.reshape(-1, 2))
        out.append(phi.reshape(space.scalar_dim, len(edges), len(t)).transpose(1, 0, 2))
    return out[0], out[1], x


def _boundary_traces(mesh: Mesh, space: DGSpace, t: np.ndarray):
    from .spaces import eval_scalar_basis

    edges = mesh.boundary_edges
    a, b = mesh.vertices[mesh.edge_vertices[edges]].transpose(1, 0, 2)
    x = a[:, None, :] * (1.0 - t)[None, :, None] + b[:, None, :] * t[None, :, None]
    cells = mesh.edge_cells[edges, 0]
    ref = mesh.map_to_reference(cells, x)
    phi, _ = eval_scalar_basis(space.degree, ref.reshape(-1, 2))
    return phi.reshape(space.scalar_dim, len(edges), len(t)).transpose(1, 0, 2), x


def _stress_jumps(mesh: Mesh, sigma_space: DGSpace, t, edges=None):
    """Jump vectors [tau_m] of every local stress dof on both sides of each
    interior edge: (E, 2*m, q, 2)."""
    edges = mesh.interior_edges if edges is None else edges
    phi_p, phi_m, x = interior_edge_traces(mesh, sigma_space, t, edges)
    nb = sigma_space.scalar_dim
    n = mesh.edge_normals[edges]
    En = np.einsum("cij,ej->eci", SYM_BASIS, n)          # (E, 3, 2)
    jp = np.einsum("ebq,eci->ecbqi", phi_p, En).reshape(len(n), 3 * nb, len(t), 2)
    jm = -np.einsum("ebq,eci->ecbqi", phi_m, En).reshape(len(n), 3 * nb, len(t), 2)
    return np.concatenate([jp, jm], axis=1), x


def assemble_A(mesh: Mesh, sigma_space: DGSpace, eta: float = 1.0, quad_degree: int | None = None,
               penalty_only: bool = False):
    """a_h(sigma, tau) = 1/2 (sigma^d, tau^d) + sum_e eta/h_e int_e [sigma].[tau].

    ``penalty_only`` drops the volume term and returns the face part alone.
    """
    if not eta > 0:
        raise ValueError(f"penalty eta must be positive, got {eta}")
    deg = quad_degree or _default_degree(sigma_space)
    rule = triangle_rule(deg)
    phi, _, comp = _sym_tables(sigma_space, rule.points)
    dev = comp - 0.5 * np.einsum("mii->m", comp)[:, None, None] * np.eye(2)
    ref = 0.5 * np.einsum("mq,nq,q,mij,nij->mn", phi, phi, rule.weights, dev, dev)
    diag = mesh.dets[:, None, None] * ref[None]
    if penalty_only:
        diag = np.zeros_like(diag)
    erule = interval_rule(deg)

    def faces():
        for start in range(0, len(mesh.interior_edges), EDGE_CHUNK):
            edges = mesh.interior_edges[start:start + EDGE_CHUNK]
            J, _ = _stress_jumps(mesh, sigma_space, erule.points[:, 0], edges)
            # ds = h_e dt cancels the 1/h_e weight
            yield start, eta * np.einsum("emqi,enqi,q->emn", J, J, erule.weights)

    pairs, off = _face_blocks(mesh, diag, faces())
    return _cell_block_matrix(diag, pairs, off)


def assemble_B(mesh: Mesh, sigma_space: DGSpace, v_space: DGSpace, quad_degree: int | None = None):
    """b_h(tau, v) = (div_h tau, v) - sum_e int_e [tau].{v}; rows are velocity dofs."""
    _check_spaces(sigma_space, v_space)
    deg = quad_degree or _default_degree(sigma_space)
    rule = triangle_rule(deg)
    phi, dphi, comp = _sym_tables(sigma_space, rule.points)
    vvals, _ = v_space.tabulate(rule.points)                  # (l, q, 2)
    # div of phi E: E @ grad(phi), grad = inv_T @ ref grad
    grad = np.einsum("cij,mqj->cmqi", mesh.inv_T, dphi)
    div = np.einsum("mij,cmqj->cmqi", comp, grad)
    diag = mesh.dets[:, None, None] * np.einsum("lqi,cmqi,q->clm", vvals, div, rule.weights)
    erule = interval_rule(deg)
    t = erule.points[:, 0]
    nb = v_space.scalar_dim
    eye = np.eye(2)

    def faces():
        for start in range(0, len(mesh.interior_edges), EDGE_CHUNK):
            edges = mesh.interior_edges[start:start + EDGE_CHUNK]
            J, _ = _stress_jumps(mesh, sigma_space, t, edges)
            vp, vm, _ = interior_edge_traces(mesh, v_space, t, edges)
            avg_p = 0.5 * np.einsum("ebq,ci->ecbqi", vp, eye).reshape(len(vp), 2 * nb, len(t), 2)
            avg_m = 0.5 * np.einsum("ebq,ci->ecbqi", vm, eye).reshape(len(vm), 2 * nb, len(t), 2)
            avg = np.concatenate([avg_p, avg_m], axis=1)
            h = mesh.edge_lengths[edges]
            yield start, -h[:, None, None] * np.einsum("elqi,emqi,q->elm", avg, J, erule.weights)

    pairs, off = _face_blocks(mesh, diag, faces())
    return _cell_block_matrix(diag, pairs, off)


def assemble_S(mesh: Mesh, v_space: DGSpace, kappa_inv: Callable, quad_degree: int | None = None):
    """s(u, v) = (kappa^-1 u, v); block diagonal per cell."""
    deg = quad_degree or 2 * v_space.degree + 4
    rule = triangle_rule(deg)
    x = mesh.map_to_physical(rule.points)
    kinv = np.broadcast_to(np.asarray(kappa_inv(x[..., 0], x[..., 1]), dtype=float), x.shape[:2])
    if not np.all(kinv > 0):
        c, q = np.argwhere(~(kinv > 0))[0]
        raise InvalidProblemError(f"kappa^-1 = {kinv[c, q]} is not positive at "
                                  f"x = ({x[c, q, 0]:.6g}, {x[c, q, 1]:.6g})")
    vvals, _ = v_space.tabulate(rule.points)
    loc = mesh.dets[:, None, None] * np.einsum("lqi,nqi,cq,q->cln", vvals, vvals, kinv, rule.weights)
    dofs = v_space.cell_dofs()
    return _coo(np.broadcast_to(dofs[:, :, None], loc.shape), np.broadcast_to(dofs[:, None, :], loc.shape),
                loc, (v_space.num_dofs, v_space.num_dofs))


def assemble_trace_constraint(mesh: Mesh, sigma_space: DGSpace, quad_degree: int | None = None) -> np.ndarray:
    """Vector c with ``c @ coeffs = int_Omega tr(tau_h)``."""
    rule = triangle_rule(quad_degree or sigma_space.degree)
    phi, _, comp = _sym_tables(sigma_space, rule.points)
    tr = np.einsum("mii->m", comp)
    loc = tr * (phi @ rule.weights)
    return (mesh.dets[:, None] * loc[None, :]).ravel()


def assemble_rhs(mesh: Mesh, sigma_space: DGSpace, v_space: DGSpace, f: Callable, g: Callable,
                 quad_degree: int | None = None):
    """G_m = sum over boundary edges of int (tau_m n).g and F_l = (f, v_l)."""
    deg = quad_degree or _default_degree(sigma_space) + 2
    rule = triangle_rule(deg)
    x = mesh.map_to_physical(rule.points)
    fx = np.broadcast_to(np.asarray(f(x[..., 0], x[..., 1]), dtype=float), x.shape)
    vvals, _ = v_space.tabulate(rule.points)
    F = (mesh.dets[:, None] * np.einsum("lqi,cqi,q->cl", vvals, fx, rule.weights)).ravel()

    erule = interval_rule(deg)
    t = erule.points[:, 0]
    phi, xb = _boundary_traces(mesh, sigma_space, t)
    gx = np.broadcast_to(np.asarray(g(xb[..., 0], xb[..., 1]), dtype=float), xb.shape)
    edges = mesh.boundary_edges
    n = mesh.edge_normals[edges]
    h = mesh.edge_lengths[edges]
    flux = np.einsum("eqi,ei,q,e->", gx, n, erule.weights, h)
    if abs(flux) > 1e-10:
        warnings.warn(f"boundary datum violates compatibility: int g.n = {flux:.3e}", stacklevel=2)
    En = np.einsum("cij,ej->eci", SYM_BASIS, n)
    loc = h[:, None, None] * np.einsum("ebq,eci,eqi,q->ecb", phi, En, gx, erule.weights)
    G = np.zeros(sigma_space.num_dofs)
    dofs = sigma_space.cell_dofs(mesh.edge_cells[edges, 0])
    np.add.at(G, dofs.ravel(), loc.reshape(len(edges), -1).ravel())
    return G, F


def identity_coefficients(sigma_space: DGSpace) -> np.ndarray:
    """Coefficients of the global identity tensor, the kernel of A and B."""
    from .spaces import interpolate

    return interpolate(sigma_space, lambda x, y: np.stack([1 + 0 * x, 0 * x, 1 + 0 * x], -1)).values


def build_saddle_system(A, B, S, c, G, F, eta: float = 1.0, sigma_block: int = 0,
                        u_block: int = 0, identity=None) -> SaddleSystem:
    ns, nu = A.shape[0], S.shape[0]
    if A.shape != (ns, ns) or B.shape != (nu, ns) or S.shape != (nu, nu) \
            or np.shape(c) != (ns,) or np.shape(G) != (ns,) or np.shape(F) != (nu,):
        raise ValueError(f"incompatible block shapes: A {A.shape}, B {B.shape}, S {S.shape}, "
                         f"c {np.shape(c)}, G {np.shape(G)}, F {np.shape(F)}")
    return SaddleSystem(sp.csr_matrix(A), sp.csr_matrix(B), sp.csr_matrix(S),
                        np.asarray(c, float), np.asarray(G, float), np.asarray(F, float), eta,
                        sigma_block, u_block, identity)


def assemble_system(mesh: Mesh, k: int, kappa_inv, f, g, eta: float = 1.0, quad_degree: int | None = None):
    """Spaces and full saddle system for the stress/velocity pair of degrees k+1 / k."""
    sigma_space = DGSpace(mesh, k + 1, "symtensor")
    v_space = DGSpace(mesh, k, "vector")
    deg = quad_degree or 2 * (k + 2)
    A = assemble_A(mesh, sigma_space, eta, deg)
    B = assemble_B(mesh, sigma_space, v_space, deg)
    S = assemble_S(mesh, v_space, kappa_inv, deg)
    c = assemble_trace_constraint(mesh, sigma_space, deg)
    G, F = assemble_rhs(mesh, sigma_space, v_space, f, g, deg)
    system = build_saddle_system(A, B, S, c, G, F, eta, sigma_space.dofs_per_cell,
                                 v_space.dofs_per_cell, identity_coefficients(sigma_space))
    return sigma_space, v_space, system


def dump_coo(matrix, path) -> None:
    """Write ``row col value`` lines with 17 significant digits."""
    m = sp.coo_matrix(matrix)
    order = np.lexsort((m.col, m.row))
    with open(path, "w") as fh:
        for r, c, v in zip(m.row[order], m.col[order], m.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")
