"""Run configuration, field export and the command-line driver.

Configuration is a YAML mapping. Every key is optional; the defaults below
reproduce the Example 1, k = 0 study::

    problem: example1          # example1 | example2 | example3 | example4 | custom
    k: 0                       # velocity degree, 0..2 (stress degree k+1)
    meshes: [4, 8, 16, 32]     # n subdivisions per side; must double for run-convergence
    diagonal: right            # right | left
    inv_kappa: [1.0e-3, 1.0, 1.0e3]
    nu: 1.0                    # scalar or list
    eta: 1.0
    penalty_scaling: physical  # physical | scaled
    solver: {method: direct, tol: 1.0e-10}
    quadrature: {elevation: 4} # error rule degree 2(k+2) + elevation
    output: {csv: convergence.csv, fields: fields, subdivide: 1}
    regions:                   # example3/example4/custom; replaces the default geometry
      background: 1.0
      shapes:
        - {rect: [0.1, 0.3, 0.15, 0.85], value: 1000.0}
        - {disc: [0.5, 0.5, 0.1], value: 1.0}
    source: [0.0, 0.0]         # custom only
    boundary: [0.0, 0.0]       # custom only

For example3 the ``value`` of each shape is replaced by ``inv_kappa``; for
example4 the background is. ``inv_kappa`` for example2 is fixed and ignored.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import problems as pb
from .mesh import MeshError, build_uniform_unit_square
from .postprocess import (CSV_HEADER, ConvergenceTable, compute_errors, error_quadrature_degree, kappa_tilde,
                          pressure_from_stress, rates, table_rows, write_convergence_csv)
from .quadrature import MAX_DEGREE
from .solver import SolverError, solve_problem
from .spaces import frobenius

log = logging.getLogger("mdgbrinkman")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

PROBLEMS = ("example1", "example2", "example3", "example4", "custom")
METHODS = ("direct", "minres")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class RunConfig:
    problem: str = "example1"
    k: int = 0
    meshes: list = field(default_factory=lambda: [4, 8, 16, 32])
    diagonal: str = "right"
    inv_kappa: list = field(default_factory=lambda: [1e-3, 1.0, 1e3])
    nu: list = field(default_factory=lambda: [1.0])
    eta: float = 1.0
    penalty_scaling: str = "physical"
    method: str = "direct"
    tol: float = 1e-10
    quad_elevation: int = 4
    csv: str = "convergence.csv"
    fields: str = "fields"
    subdivide: int = 1
    regions: dict | None = None
    source: list = field(default_factory=lambda: [0.0, 0.0])
    boundary: list = field(default_factory=lambda: [0.0, 0.0])
    jobs: int = 1

    def to_mapping(self) -> dict:
        d = asdict(self)
        return {
            "problem": d["problem"], "k": d["k"], "meshes": d["meshes"], "diagonal": d["diagonal"],
            "inv_kappa": d["inv_kappa"], "nu": d["nu"], "eta": d["eta"],
            "penalty_scaling": d["penalty_scaling"],
            "solver": {"method": d["method"], "tol": d["tol"]},
            "quadrature": {"elevation": d["quad_elevation"]},
            "output": {"csv": d["csv"], "fields": d["fields"], "subdivide": d["subdivide"]},
            "regions": d["regions"], "source": d["source"], "boundary": d["boundary"], "jobs": d["jobs"],
        }


_TOP_KEYS = {"problem", "k", "meshes", "diagonal", "inv_kappa", "nu", "eta", "penalty_scaling",
             "solver", "quadrature", "output", "regions", "source", "boundary", "jobs"}


def _number(value):
    # PyYAML reads literals such as 1e-3 as strings
    if isinstance(value, bool):
        raise ValueError
    return float(value)


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def parse_config(mapping: dict | None, base: RunConfig | None = None) -> RunConfig:
    """Validate a config mapping; all problems are reported together."""
    mapping = dict(mapping or {})
    cfg = replace(base) if base else RunConfig()
    errors = []
    unknown = sorted(set(mapping) - _TOP_KEYS)
    if unknown:
        errors.append(f"unknown keys: {', '.join(unknown)}")

    def take(name, convert, target=None, src=mapping):
        if name not in src or src[name] is None:
            return
        try:
            setattr(cfg, target or name, convert(src[name]))
        except (TypeError, ValueError):
            errors.append(f"{target or name}: cannot interpret {src[name]!r}")

    take("problem", str)
    take("k", int)
    take("meshes", lambda v: [int(x) for x in _as_list(v)])
    take("diagonal", str)
    take("inv_kappa", lambda v: [_number(x) for x in _as_list(v)])
    take("nu", lambda v: [_number(x) for x in _as_list(v)])
    take("eta", _number)
    take("penalty_scaling", str)
    take("jobs", int)
    take("source", lambda v: [_number(x) for x in v])
    take("boundary", lambda v: [_number(x) for x in v])
    for section, keys in (("solver", {"method": ("method", str), "tol": ("tol", _number)}),
                          ("quadrature", {"elevation": ("quad_elevation", int)}),
                          ("output", {"csv": ("csv", str), "fields": ("fields", str),
                                      "subdivide": ("subdivide", int)})):
        sub = mapping.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            errors.append(f"{section}: expected a mapping")
            continue
        for key in sorted(set(sub) - set(keys)):
            errors.append(f"{section}.{key}: unknown key")
        for key, (target, conv) in keys.items():
            take(key, conv, target, sub)
    if "regions" in mapping and mapping["regions"] is not None:
        cfg.regions = mapping["regions"]

    errors += validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    errors = []
    if cfg.problem not in PROBLEMS:
        errors.append(f"problem: {cfg.problem!r} not in {', '.join(PROBLEMS)}")
    if not isinstance(cfg.k, int) or not 0 <= cfg.k <= 2:
        errors.append(f"k: {cfg.k!r} not in 0..2")
    if not cfg.meshes or any(n < 1 for n in cfg.meshes):
        errors.append(f"meshes: need positive subdivision counts, got {cfg.meshes}")
    if cfg.diagonal not in ("right", "left"):
        errors.append(f"diagonal: {cfg.diagonal!r} not in right, left")
    if any(not (v > 0 and math.isfinite(v)) for v in cfg.inv_kappa) or not cfg.inv_kappa:
        errors.append(f"inv_kappa: values must be positive and finite, got {cfg.inv_kappa}")
    if any(not (v > 0 and math.isfinite(v)) for v in cfg.nu) or not cfg.nu:
        errors.append(f"nu: values must be positive and finite, got {cfg.nu}")
    if not cfg.eta > 0:
        errors.append(f"eta: must be positive, got {cfg.eta}")
    if cfg.penalty_scaling not in ("physical", "scaled"):
        errors.append(f"penalty_scaling: {cfg.penalty_scaling!r} not in physical, scaled")
    if cfg.method not in METHODS:
        errors.append(f"solver.method: {cfg.method!r} not in {', '.join(METHODS)}")
    if not cfg.tol > 0:
        errors.append(f"solver.tol: must be positive, got {cfg.tol}")
    if isinstance(cfg.k, int) and not 0 <= error_quadrature_degree(cfg.k) - 4 + cfg.quad_elevation <= MAX_DEGREE:
        errors.append(f"quadrature.elevation: {cfg.quad_elevation} leaves the supported range")
    if cfg.subdivide < 1:
        errors.append(f"output.subdivide: must be >= 1, got {cfg.subdivide}")
    if cfg.jobs < 1:
        errors.append(f"jobs: must be >= 1, got {cfg.jobs}")
    if len(cfg.source) != 2 or len(cfg.boundary) != 2:
        errors.append("source and boundary must have two components")
    if cfg.regions is not None:
        try:
            _regions(cfg.regions)
        except (pb.InvalidProblemError, TypeError, ValueError, KeyError) as exc:
            errors.append(f"regions: {exc}")
    if cfg.problem == "custom" and cfg.regions is None and len(cfg.inv_kappa) != 1:
        errors.append("custom problem takes a single inv_kappa or a regions section")
    return errors


def _regions(spec):
    if not isinstance(spec, dict) or "shapes" not in spec:
        raise pb.InvalidProblemError("expected a mapping with 'shapes' (and optional 'background')")
    background = _number(spec.get("background", 1.0))
    if not background > 0:
        raise pb.InvalidProblemError(f"background must be positive, got {background}")
    shapes = pb.region_shapes(spec["shapes"] or [])
    for s in shapes:
        if not s.value > 0:
            raise pb.InvalidProblemError(f"region value must be positive, got {s.value}")
    return background, shapes


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return data or {}


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_mapping(), sort_keys=False)


# ---------------------------------------------------------------- problems

def build_problem(cfg: RunConfig, inv_kappa: float, nu: float) -> pb.BrinkmanProblem:
    if cfg.problem == "example1":
        return pb.example1(inv_kappa).with_nu(nu)
    if cfg.problem == "example2":
        return pb.example2(nu)
    shapes = None
    if cfg.regions is not None:
        background, shapes = _regions(cfg.regions)
    if cfg.problem == "example3":
        if shapes is None:
            return pb.example3(inv_kappa, nu=nu)
        if not all(isinstance(s, pb.Rectangle) for s in shapes):
            raise pb.InvalidProblemError("example3 obstacles must be rectangles")
        return pb.example3(inv_kappa, bars=[(s.x0, s.x1, s.y0, s.y1) for s in shapes], nu=nu)
    if cfg.problem == "example4":
        if shapes is None:
            return pb.example4(inv_kappa, nu=nu)
        vugs = [("rect", (s.x0, s.x1, s.y0, s.y1)) if isinstance(s, pb.Rectangle)
                else ("disc", (s.cx, s.cy, s.r)) for s in shapes]
        return pb.example4(inv_kappa, vugs=vugs, nu=nu)
    kinv = (pb.KappaInvField.from_regions(background, shapes) if shapes is not None
            else pb.KappaInvField.constant(inv_kappa))
    return pb.custom(kinv, tuple(cfg.source), tuple(cfg.boundary), nu)


def _inv_kappa_values(cfg: RunConfig):
    return [None] if cfg.problem == "example2" else cfg.inv_kappa


def _one_run(args):
    cfg, inv_kappa, nu, n = args
    prob = build_problem(cfg, inv_kappa if inv_kappa is not None else 1.0, nu)
    mesh = build_uniform_unit_square(n, cfg.diagonal)
    sol = solve_problem(prob, mesh, cfg.k, eta=cfg.eta, method=cfg.method, tol=cfg.tol,
                        penalty_scaling=cfg.penalty_scaling)
    kt = kappa_tilde(prob.kappa_inv, mesh)
    errors = compute_errors(sol, prob.exact, kt, error_quadrature_degree(cfg.k) - 4 + cfg.quad_elevation)
    log.info("k=%d inv_kappa=%s nu=%g n=%d: u_l2=%.5e residual=%.2e (%.1fs)", cfg.k,
             prob.kappa_inv.label, nu, n, errors.u_l2, sol.report.relative_residual, sol.report.wall_time)
    return errors


def run_convergence(cfg: RunConfig) -> list[ConvergenceTable]:
    """One table per (inv_kappa, nu) pair; rows follow the mesh list."""
    if cfg.problem not in ("example1", "example2"):
        raise ConfigError([f"problem: {cfg.problem} has no exact solution for a convergence study"])
    ns = list(cfg.meshes)
    if len(ns) < 2 or any(b != 2 * a for a, b in zip(ns, ns[1:])):
        raise ConfigError([f"meshes: need at least two sizes, each double the previous; got {ns}"])
    tasks = [(cfg, ik, nu, n) for ik in _inv_kappa_values(cfg) for nu in cfg.nu for n in ns]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_one_run, tasks))
    else:
        results = [_one_run(t) for t in tasks]
    tables = []
    it = iter(results)
    for ik in _inv_kappa_values(cfg):
        for nu in cfg.nu:
            label = pb.example2_kappa_inv().label if ik is None else ik
            table = ConvergenceTable(cfg.k, label, nu)
            for n in ns:
                table.add(n, next(it))
            rates(table)
            tables.append(table)
    return tables


# ---------------------------------------------------------------- VTU export

def _lattice(level: int):
    """Reference points and sub-triangles of a uniform subdivision."""
    pts, index = [], {}
    for j in range(level + 1):
        for i in range(level + 1 - j):
            index[i, j] = len(pts)
            pts.append((i / level, j / level))
    tris = []
    for j in range(level):
        for i in range(level - j):
            tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j < level - 1:
                tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    return np.array(pts), np.array(tris, dtype=np.int64)


def sample_fields(solution, subdivide: int = 1):
    """Points (P, 2), triangles (T, 3) and point data on duplicated per-cell vertices."""
    mesh = solution.mesh
    ref, tris = _lattice(subdivide)
    pts = mesh.map_to_physical(ref)                          # (C, r, 2)
    u = solution.u.evaluate(ref)["values"]
    sig = solution.sigma.evaluate(ref)["values"]
    offs = (np.arange(mesh.num_cells) * len(ref))[:, None, None]
    conn = (tris[None] + offs).reshape(-1, 3)
    return (pts.reshape(-1, 2), conn, {"u": u.reshape(-1, 2),
                                       "stress_intensity": frobenius(sig).ravel(),
                                       "p": pressure_from_stress(sig).ravel()})


def _ascii(values) -> str:
    return " ".join(f"{v:.9g}" for v in np.asarray(values, dtype=float).ravel())


def write_vtu(path, points, triangles, point_data: dict, comment: str = "") -> None:
    """ASCII VTK UnstructuredGrid of linear triangles."""
    npts, ncell = len(points), len(triangles)
    xyz = np.column_stack([points, np.zeros(npts)])
    lines = ['<?xml version="1.0"?>']
    if comment:
        lines.append(f"<!-- {comment} -->")
    lines += ['<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">',
              "<UnstructuredGrid>", f'<Piece NumberOfPoints="{npts}" NumberOfCells="{ncell}">',
              "<PointData>"]
    for name, vals in point_data.items():
        vals = np.asarray(vals, dtype=float)
        if vals.ndim == 2 and vals.shape[1] == 2:
            vals = np.column_stack([vals, np.zeros(len(vals))])
        ncomp = 1 if vals.ndim == 1 else vals.shape[1]
        lines.append(f'<DataArray type="Float64" Name="{name}" NumberOfComponents="{ncomp}" format="ascii">')
        lines.append(_ascii(vals))
        lines.append("</DataArray>")
    lines += ["</PointData>", "<Points>",
              '<DataArray type="Float64" NumberOfComponents="3" format="ascii">', _ascii(xyz),
              "</DataArray>", "</Points>", "<Cells>",
              '<DataArray type="Int64" Name="connectivity" format="ascii">',
              " ".join(map(str, np.asarray(triangles).ravel())), "</DataArray>",
              '<DataArray type="Int64" Name="offsets" format="ascii">',
              " ".join(map(str, 3 * np.arange(1, ncell + 1))), "</DataArray>",
              '<DataArray type="UInt8" Name="types" format="ascii">', " ".join(["5"] * ncell),
              "</DataArray>", "</Cells>", "</Piece>", "</UnstructuredGrid>", "</VTKFile>"]
    Path(path).write_text("\n".join(lines) + "\n")


def export_fields(solution, prefix, subdivide: int = 1) -> list[Path]:
    """Write ``<prefix>_u.vtu``, ``<prefix>_stress.vtu`` and ``<prefix>_p.vtu``."""
    pts, tris, data = sample_fields(solution, subdivide)
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    out = []
    for suffix, name, note in (("u", "u", "velocity"),
                               ("stress", "stress_intensity",
                                "stress intensity = sqrt(s11^2 + 2 s12^2 + s22^2) (Frobenius norm)"),
                               ("p", "p", "pressure p = -tr(sigma)/2")):
        path = prefix.with_name(f"{prefix.name}_{suffix}.vtu")
        write_vtu(path, pts, tris, {name: data[name]}, note)
        out.append(path)
    return out


def run_single(cfg: RunConfig, dump_matrix=None):
    """Solve on the first mesh size with the first inv_kappa / nu and export fields."""
    ik = _inv_kappa_values(cfg)[0]
    nu = cfg.nu[0]
    prob = build_problem(cfg, ik if ik is not None else 1.0, nu)
    mesh = build_uniform_unit_square(cfg.meshes[0], cfg.diagonal)
    if dump_matrix:
        from .assembly import assemble_system, dump_coo

        scaled = pb.nu_scale(prob)
        eta = cfg.eta * nu if cfg.penalty_scaling == "physical" else cfg.eta
        _, _, system = assemble_system(mesh, cfg.k, scaled.kappa_inv, scaled.f, scaled.g, eta=eta)
        dump_coo(system.matrix(), dump_matrix)
    sol = solve_problem(prob, mesh, cfg.k, eta=cfg.eta, method=cfg.method, tol=cfg.tol,
                        penalty_scaling=cfg.penalty_scaling)
    paths = export_fields(sol, cfg.fields, cfg.subdivide)
    return sol, paths


# ---------------------------------------------------------------- CLI

def _parser():
    p = argparse.ArgumentParser(prog="mdgbrinkman",
                                description="Mixed DG solver for Brinkman flow (pseudostress-velocity form).")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run-convergence", "mesh-refinement study with error table and CSV"),
                           ("run-single", "one solve with VTU field export")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", nargs="?", help="YAML run configuration")
        s.add_argument("--problem", choices=PROBLEMS)
        s.add_argument("-k", type=int)
        s.add_argument("--meshes", type=int, nargs="+", metavar="N")
        s.add_argument("--diagonal", choices=("right", "left"))
        s.add_argument("--inv-kappa", type=float, nargs="+")
        s.add_argument("--nu", type=float, nargs="+")
        s.add_argument("--eta", type=float)
        s.add_argument("--penalty-scaling", choices=("physical", "scaled"))
        s.add_argument("--method", choices=METHODS)
        s.add_argument("--tol", type=float)
        s.add_argument("--jobs", type=int)
        s.add_argument("--print-config", action="store_true", help="print the effective config and exit")
        if name == "run-convergence":
            s.add_argument("--csv", help="output CSV path")
        else:
            s.add_argument("--fields", help="output prefix for the VTU files")
            s.add_argument("--subdivide", type=int)
            s.add_argument("--dump-matrix", metavar="PATH", help="write the global matrix as 'row col value'")
    return p


_FLAG_KEYS = {"problem": "problem", "k": "k", "meshes": "meshes", "diagonal": "diagonal",
              "inv_kappa": "inv_kappa", "nu": "nu", "eta": "eta", "penalty_scaling": "penalty_scaling",
              "method": "method", "tol": "tol", "jobs": "jobs", "csv": "csv", "fields": "fields",
              "subdivide": "subdivide"}


def config_from_args(args) -> RunConfig:
    mapping = load_config(args.config) if args.config else {}
    cfg = parse_config(mapping)
    overrides = {key: getattr(args, attr) for attr, key in _FLAG_KEYS.items()
                 if getattr(args, attr, None) is not None}
    if overrides:
        cfg = replace(cfg, **overrides)
        errors = validate(cfg)
        if errors:
            raise ConfigError(errors)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if args.command == "run-convergence":
            tables = run_convergence(cfg)
            write_convergence_csv(tables, cfg.csv)
            print(",".join(CSV_HEADER))
            for table in tables:
                for row in table_rows(table):
                    print(",".join(row))
            print(f"wrote {cfg.csv}", file=sys.stderr)
        else:
            sol, paths = run_single(cfg, args.dump_matrix)
            for path in paths:
                print(f"wrote {path}")
            print(f"relative residual {sol.report.relative_residual:.3e}, "
                  f"{sol.report.wall_time:.2f}s", file=sys.stderr)
    except (ConfigError, pb.InvalidProblemError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if exc.residual_history:
            print("residual history: " + ", ".join(f"{r:.3e}" for r in exc.residual_history), file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
