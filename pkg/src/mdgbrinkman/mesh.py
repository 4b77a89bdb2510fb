"""Uniform triangulations of the unit square with edge connectivity.

Cells are stored counterclockwise. Local edge ``i`` of a cell is the edge
opposite local vertex ``i``; each edge stores one canonical unit normal,
pointing out of its first (lower-indexed) adjacent cell.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np


class MeshError(ValueError):
    pass


class EdgeRecord(NamedTuple):
    vertices: tuple[int, int]
    cells: tuple[int, ...]
    normal: np.ndarray
    length: float
    boundary: bool


@dataclass(frozen=True)
class AffineMap:
    """Affine map ``x = B @ xi + b`` from the reference triangle onto a cell."""

    B: np.ndarray
    b: np.ndarray
    det: float
    inv_T: np.ndarray

    def __call__(self, xi):
        return np.asarray(xi) @ self.B.T + self.b

    def inverse(self, x):
        return (np.asarray(x) - self.b) @ self.inv_T


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray        # (V, 2)
    cells: np.ndarray           # (C, 3), counterclockwise
    edge_vertices: np.ndarray   # (E, 2), ordered as traversed by the first cell
    edge_cells: np.ndarray      # (E, 2), second entry -1 on the boundary
    cell_edges: np.ndarray      # (C, 3)
    cell_edge_signs: np.ndarray  # (C, 3), +1 if the cell is the edge's first cell

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_edges(self) -> int:
        return len(self.edge_vertices)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return self.edge_cells[:, 1] < 0

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = np.diff(self.vertices[self.edge_vertices], axis=1)[:, 0]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        # counterclockwise traversal a -> b of the first cell: outward = (dy, -dx)
        d = np.diff(self.vertices[self.edge_vertices], axis=1)[:, 0]
        return np.column_stack([d[:, 1], -d[:, 0]]) / self.edge_lengths[:, None]

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Per-cell Jacobians ``B_K`` with columns ``v1 - v0`` and ``v2 - v0``."""
        p = self.vertices[self.cells]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def dets(self) -> np.ndarray:
        B = self.jacobians
        return B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]

    @cached_property
    def inv_T(self) -> np.ndarray:
        B = self.jacobians
        inv = np.empty_like(B)
        inv[:, 0, 0] = B[:, 1, 1]
        inv[:, 0, 1] = -B[:, 1, 0]
        inv[:, 1, 0] = -B[:, 0, 1]
        inv[:, 1, 1] = B[:, 0, 0]
        return inv / self.dets[:, None, None]

    @property
    def areas(self) -> np.ndarray:
        return 0.5 * self.dets

    def edge(self, index: int) -> EdgeRecord:
        c0, c1 = self.edge_cells[index]
        cells = (int(c0),) if c1 < 0 else (int(c0), int(c1))
        a, b = self.edge_vertices[index]
        return EdgeRecord((int(a), int(b)), cells, self.edge_normals[index].copy(),
                          float(self.edge_lengths[index]), c1 < 0)

    def map_to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical images of reference points in every cell, shape (C, npts, 2)."""
        x0 = self.vertices[self.cells[:, 0]]
        return np.einsum("cij,qj->cqi", self.jacobians, ref_points) + x0[:, None, :]

    def map_to_reference(self, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Reference coordinates of ``points[e]`` (E, npts, 2) inside ``cells[e]``."""
        x0 = self.vertices[self.cells[cells, 0]]
        return np.einsum("eqj,eji->eqi", points - x0[:, None, :], self.inv_T[cells])


def from_cells(vertices, cells) -> Mesh:
    """Build the edge structure for a counterclockwise triangle list."""
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    edge_index: dict[tuple[int, int], int] = {}
    edge_vertices: list[tuple[int, int]] = []
    edge_cells: list[list[int]] = []
    cell_edges = np.empty_like(cells)
    signs = np.empty_like(cells)
    for c, tri in enumerate(cells):
        for i in range(3):
            a, b = int(tri[(i + 1) % 3]), int(tri[(i + 2) % 3])
            key = (min(a, b), max(a, b))
            e = edge_index.get(key)
            if e is None:
                e = len(edge_vertices)
                edge_index[key] = e
                edge_vertices.append((a, b))
                edge_cells.append([c, -1])
                signs[c, i] = 1
            else:
                if edge_cells[e][1] >= 0:
                    raise MeshError(f"edge {key} shared by more than two cells")
                edge_cells[e][1] = c
                signs[c, i] = -1
            cell_edges[c, i] = e
    mesh = Mesh(vertices, cells, np.array(edge_vertices, dtype=np.int64),
                np.array(edge_cells, dtype=np.int64), cell_edges, signs)
    bad = np.flatnonzero(mesh.dets <= 0)
    if bad.size:
        raise MeshError(f"cells {bad[:10].tolist()} have non-positive signed area")
    return mesh


def build_uniform_unit_square(n: int, diagonal: str = "right") -> Mesh:
    """Split an ``n x n`` grid of the unit square into ``2 n^2`` triangles.

    ``diagonal="right"`` cuts every square from lower-left to upper-right,
    ``"left"`` from lower-right to upper-left.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"mesh refinement n must be a positive integer, got {n!r}")
    if diagonal not in ("right", "left"):
        raise MeshError(f"diagonal must be 'right' or 'left', got {diagonal!r}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.divmod(np.arange(n * n), n)
    v0 = j * (n + 1) + i
    v1, v2 = v0 + 1, v0 + n + 1
    v3 = v2 + 1
    if diagonal == "right":
        lower = np.column_stack([v0, v1, v3])
        upper = np.column_stack([v0, v3, v2])
    else:
        lower = np.column_stack([v0, v1, v2])
        upper = np.column_stack([v1, v3, v2])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return from_cells(vertices, cells)


def affine_map(mesh: Mesh, cell: int) -> AffineMap:
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell index {cell} out of range [0, {mesh.num_cells})")
    det = float(mesh.dets[cell])
    if not det > 0:
        raise MeshError(f"cell {cell} is degenerate (det B_K = {det})")
    return AffineMap(mesh.jacobians[cell].copy(), mesh.vertices[mesh.cells[cell, 0]].copy(),
                     det, mesh.inv_T[cell].copy())


def edge_quadrature_geometry(mesh: Mesh, edge: int) -> tuple[Callable[[np.ndarray], np.ndarray], np.ndarray, float]:
    """Parameterization ``t -> (1-t) v0 + t v1`` of an edge, its normal and length."""
    if not 0 <= edge < mesh.num_edges:
        raise IndexError(f"edge index {edge} out of range [0, {mesh.num_edges})")
    a, b = mesh.vertices[mesh.edge_vertices[edge]]

    def points(t):
        t = np.asarray(t, dtype=float)[..., None]
        return (1.0 - t) * a + t * b

    return points, mesh.edge_normals[edge].copy(), float(mesh.edge_lengths[edge])
