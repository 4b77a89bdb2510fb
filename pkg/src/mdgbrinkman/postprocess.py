"""Pressure recovery, error norms, convergence rates and local conservation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .quadrature import interval_rule, triangle_rule
from .spaces import DGSpace, FieldCoefficients, contract, deviatoric, normal_action, trace

CSV_HEADER = ("inv_kappa", "nu", "k", "n", "u_l2", "u_rate", "sigma_broken", "sigma_broken_rate",
              "sigma_l2", "sigma_l2_rate", "p_l2", "p_rate")


def pressure_from_stress(sigma):
    """p = -tr(sigma) / 2, pointwise on (..., 3) arrays or as a scalar DG field."""
    if isinstance(sigma, FieldCoefficients):
        space = sigma.space
        if space.kind != "symtensor":
            raise ValueError("pressure recovery needs a symmetric-tensor field")
        c = sigma.cellwise.reshape(space.mesh.num_cells, 3, space.scalar_dim)
        p_space = DGSpace(space.mesh, space.degree, "scalar")
        return FieldCoefficients(p_space, (-0.5 * (c[:, 0] + c[:, 2])).ravel())
    return -0.5 * trace(sigma)


def error_quadrature_degree(k: int) -> int:
    return 2 * (k + 2) + 4


def kappa_tilde(kappa_inv, mesh, quad_degree: int = 4) -> float:
    """min(inf kappa, 1), with the infimum taken over quadrature samples."""
    rule = triangle_rule(quad_degree)
    x = mesh.map_to_physical(rule.points)
    kinv = np.asarray(kappa_inv(x[..., 0], x[..., 1]), dtype=float)
    return float(min(1.0 / np.max(kinv), 1.0))


@dataclass(frozen=True)
class ErrorBundle:
    u_l2: float
    sigma_broken: float
    sigma_l2: float
    p_l2: float
    jump_seminorm: float
    kappa_tilde: float
    sigma_dev_l2: float = math.nan
    sigma_div_l2: float = math.nan


def jump_seminorm(sigma: FieldCoefficients, quad_degree: int | None = None) -> float:
    """(sum over interior edges of h_e^-1 ||[sigma]||_e^2)^(1/2)."""
    mesh = sigma.space.mesh
    edges = mesh.interior_edges
    if not len(edges):
        return 0.0
    rule = interval_rule(quad_degree or 2 * sigma.space.degree)
    t = rule.points[:, 0]
    a, b = mesh.vertices[mesh.edge_vertices[edges]].transpose(1, 0, 2)
    x = a[:, None, :] * (1.0 - t)[None, :, None] + b[:, None, :] * t[None, :, None]
    n = mesh.edge_normals[edges][:, None, :]
    diff = sigma.values_at(mesh.edge_cells[edges, 0], x) - sigma.values_at(mesh.edge_cells[edges, 1], x)
    jump = normal_action(diff, n)
    # ds = h_e dt cancels the 1/h_e weight
    return float(np.sqrt(np.einsum("eqi,eqi,q->", jump, jump, rule.weights)))


def compute_errors(solution, exact, kappa_tilde_value: float, quad_degree: int | None = None) -> ErrorBundle:
    """Errors of a :class:`DiscreteSolution` against ``exact`` in physical variables."""
    mesh, nu = solution.mesh, solution.nu
    rule = triangle_rule(quad_degree or error_quadrature_degree(solution.k))
    x = mesh.map_to_physical(rule.points)
    X, Y = x[..., 0], x[..., 1]
    w = mesh.dets[:, None] * rule.weights[None, :]

    uh = solution.u.evaluate(rule.points)
    sh = solution.sigma.evaluate(rule.points)
    eu = exact.u(X, Y) - uh["values"]
    es = exact.sigma(X, Y, nu) - sh["values"]
    ediv = exact.div_sigma(X, Y, nu) - sh["div"]
    ep = exact.p(X, Y) - pressure_from_stress(sh["values"])
    edev = deviatoric(es)

    u_l2 = math.sqrt(np.sum(w * np.einsum("cqi,cqi->cq", eu, eu)))
    sigma_l2 = math.sqrt(np.sum(w * contract(es, es)))
    p_l2 = math.sqrt(np.sum(w * ep ** 2))
    dev_l2 = math.sqrt(np.sum(w * contract(edev, edev)))
    div_l2 = math.sqrt(np.sum(w * np.einsum("cqi,cqi->cq", ediv, ediv)))
    jump = jump_seminorm(solution.sigma, quad_degree)
    broken = math.sqrt(dev_l2 ** 2 + kappa_tilde_value * div_l2 ** 2 + jump ** 2)
    return ErrorBundle(u_l2, broken, sigma_l2, p_l2, jump, kappa_tilde_value, dev_l2, div_l2)


def local_conservation_residual(solution, f, kappa_inv, quad_degree: int | None = None) -> np.ndarray:
    """Per-cell residual nu int_K kappa^-1 u_h - int_dK sigma_hat n_K - int_K f, shape (C, 2).

    ``sigma_hat`` is the average on interior edges and the trace on boundary
    edges; fluxes are integrated directly from the edge traces. The default
    rule is the one used for assembly, under which the balance is exact up
    to solver tolerance.
    """
    mesh, nu = solution.mesh, solution.nu
    deg = quad_degree or solution.quad_degree
    rule = triangle_rule(deg)
    x = mesh.map_to_physical(rule.points)
    w = mesh.dets[:, None] * rule.weights[None, :]
    kinv = np.broadcast_to(np.asarray(kappa_inv(x[..., 0], x[..., 1]), dtype=float), w.shape)
    fx = np.broadcast_to(np.asarray(f(x[..., 0], x[..., 1]), dtype=float), x.shape)
    uh = solution.u.evaluate(rule.points)["values"]
    resid = np.einsum("cq,cqi->ci", w * nu * kinv, uh) - np.einsum("cq,cqi->ci", w, fx)

    erule = interval_rule(deg)
    t = erule.points[:, 0]
    edges = np.arange(mesh.num_edges)
    a, b = mesh.vertices[mesh.edge_vertices].transpose(1, 0, 2)
    xe = a[:, None, :] * (1.0 - t)[None, :, None] + b[:, None, :] * t[None, :, None]
    first, second = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    interior = second >= 0
    hat = solution.sigma.values_at(first, xe)
    hat[interior] = 0.5 * (hat[interior] + solution.sigma.values_at(second[interior], xe[interior]))
    n = mesh.edge_normals[:, None, :]
    flux = mesh.edge_lengths[:, None] * np.einsum("eqi,q->ei", normal_action(hat, n), erule.weights)
    # canonical normals point out of the first cell
    np.add.at(resid, first, -flux)
    np.add.at(resid, second[interior], flux[interior])
    return resid


def mean_speed(solution, region=None, quad_degree: int = 4) -> float:
    """Area-weighted mean of |u_h| over the points where ``region(x, y)`` holds."""
    mesh = solution.mesh
    rule = triangle_rule(quad_degree)
    x = mesh.map_to_physical(rule.points)
    w = mesh.dets[:, None] * rule.weights[None, :]
    if region is not None:
        w = w * np.asarray(region(x[..., 0], x[..., 1]), dtype=bool)
    if not w.sum() > 0:
        raise ValueError("region contains no quadrature points")
    speed = np.linalg.norm(solution.u.evaluate(rule.points)["values"], axis=-1)
    return float(np.sum(w * speed) / np.sum(w))


def rate(e_coarse: float, e_fine: float) -> float:
    """Observed order for one mesh halving."""
    if e_coarse == e_fine:
        return 0.0
    if e_coarse <= 0 or e_fine <= 0:
        return math.nan
    return math.log2(e_coarse / e_fine)


RATE_FIELDS = ("u_l2", "sigma_broken", "sigma_l2", "p_l2")


@dataclass
class ConvergenceTable:
    """Errors on a sequence of meshes whose ``n`` doubles from row to row."""

    k: int
    inv_kappa: object
    nu: float = 1.0
    rows: list = field(default_factory=list)   # (n, ErrorBundle)

    def add(self, n: int, errors: ErrorBundle) -> None:
        self.rows.append((int(n), errors))

    @property
    def ns(self) -> list[int]:
        return [n for n, _ in self.rows]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for _, e in self.rows])


def rates(table: ConvergenceTable) -> dict[str, np.ndarray]:
    """Rates per error column; the first entry of each column is NaN."""
    ns = table.ns
    if len(ns) < 2:
        raise ValueError("need at least two refinement levels to compute rates")
    for coarse, fine in zip(ns, ns[1:]):
        if fine != 2 * coarse:
            raise ValueError(f"mesh sequence must halve h at every step; got n = {ns}")
    out = {}
    for name in RATE_FIELDS:
        col = table.column(name)
        out[name] = np.array([math.nan] + [rate(a, b) for a, b in zip(col, col[1:])])
    return out


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"


def table_rows(table: ConvergenceTable) -> list[list[str]]:
    r = rates(table) if len(table.rows) > 1 else {k: [math.nan] * len(table.rows) for k in RATE_FIELDS}
    out = []
    for i, (n, e) in enumerate(table.rows):
        out.append([_fmt(table.inv_kappa), _fmt(table.nu), str(table.k), str(n),
                    _fmt(e.u_l2), _fmt(r["u_l2"][i]), _fmt(e.sigma_broken), _fmt(r["sigma_broken"][i]),
                    _fmt(e.sigma_l2), _fmt(r["sigma_l2"][i]), _fmt(e.p_l2), _fmt(r["p_l2"][i])])
    return out


def write_convergence_csv(tables, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for table in tables:
            writer.writerows(table_rows(table))


def error_bundle_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(ErrorBundle))
