"""Substitution matrix coupling inclusion-mesh nodes to the structured grid.

Row ``i`` of ``S`` holds the grid shape functions of the cell containing
inclusion node ``i`` evaluated at the node's reference coordinates, so that
``v = S u`` interpolates grid nodal values ``u`` onto the inclusion mesh.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .elements import shape_values
from .meshkit.grid import StructuredGrid
from .meshkit.mesh import UnstructuredMesh

log = logging.getLogger(__name__)

_SNAP = 1e-10  # relative distance (in cells) below which a point sits on a grid line
_BOUNDS = 1e-9


class LocationError(ValueError):
    pass


def wrap_points(grid: StructuredGrid, points) -> np.ndarray:
    """Wrap coordinates into the grid box modulo the side lengths."""
    x = np.asarray(points, float)
    org = np.asarray(grid.origin)
    L = np.asarray(grid.lengths)
    return org + np.mod(x - org, L)


def locate_points(grid: StructuredGrid, points, periodic: bool = False):
    """Containing cells and reference coordinates for many points.

    Returns ``(cells, ref)`` with ``cells`` the linear cell indices and
    ``ref`` in ``[-1, 1]^dim``. Points on interior grid lines go to the
    higher cell (floor rule); points on the upper boundary go to the last
    cell. Reference coordinates within ``1e-10`` of a cell face are snapped
    onto it so that coincident nodes produce exact 0/1 rows.
    """
    x = np.atleast_2d(np.asarray(points, float))
    if x.shape[1] != grid.dim:
        raise LocationError(f"points must be {grid.dim}-dimensional")
    if periodic:
        x = wrap_points(grid, x)
    s = (x - np.asarray(grid.origin)) / grid.h
    res = np.asarray(grid.resolution)
    near = np.round(s)
    s = np.where(np.abs(s - near) < _SNAP * np.maximum(1.0, np.abs(s)), near, s)
    outside = ((s < -_BOUNDS) | (s > res + _BOUNDS)).any(axis=1)
    if np.any(outside):
        i = int(np.flatnonzero(outside)[0])
        raise LocationError(
            f"point {i} at {x[i].tolist()} lies outside the grid "
            f"[{list(grid.origin)}, {[o + L for o, L in zip(grid.origin, grid.lengths)]}]"
        )
    s = np.clip(s, 0.0, res)
    if periodic:
        s = np.where(s >= res, 0.0, s)
    ijk = np.minimum(np.floor(s).astype(np.int64), res - 1)
    ref = 2.0 * (s - ijk) - 1.0
    return grid.cell_index(ijk), ref


def locate(grid: StructuredGrid, point, periodic: bool = False):
    """Cell integer coordinates and reference coordinates of one point."""
    cells, ref = locate_points(grid, np.asarray(point, float)[None], periodic)
    return tuple(int(v) for v in grid.cell_ijk(cells[0])), ref[0]


@dataclass(frozen=True)
class SubstitutionMatrix:
    """Sparse ``p x n`` map with ``v = S u``.

    ``matrix`` acts on all DOFs (``dofs_per_node`` components per node,
    node-major). ``scalar`` is the per-node map it was expanded from. With
    ``periodic`` set, columns index the reduced (master) grid numbering
    given by ``StructuredGrid.periodic_node_map``.
    """

    matrix: sp.csr_matrix
    scalar: sp.csr_matrix
    dofs_per_node: int
    periodic: bool
    cells: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, u):
        return self.matrix @ u


def substitution_rows(grid: StructuredGrid, points, periodic: bool = False):
    cells, ref = locate_points(grid, points, periodic)
    phi = shape_values(grid.element_type, ref)
    cols = grid.cell_nodes[cells]
    if periodic:
        cols = grid.periodic_node_map()[cols]
        n_cols = grid.n_cells
    else:
        n_cols = grid.n_nodes
    p = cells.size
    rows = np.repeat(np.arange(p), phi.shape[1])
    S = sp.csr_matrix((phi.ravel(), (rows, cols.ravel())), shape=(p, n_cols))
    S.eliminate_zeros()
    S.sort_indices()
    return S, cells


def expand_dofs(S: sp.spmatrix, ncomp: int) -> sp.csr_matrix:
    """Block form: same scalar weights for every displacement component."""
    if ncomp == 1:
        return sp.csr_matrix(S)
    return sp.kron(S, sp.identity(ncomp), format="csr")


def build_substitution(grid: StructuredGrid, inclusion_mesh, dofs_per_node: int = 1,
                       periodic: bool = False) -> SubstitutionMatrix:
    points = inclusion_mesh.nodes if isinstance(inclusion_mesh, UnstructuredMesh) else inclusion_mesh
    try:
        scalar, cells = substitution_rows(grid, points, periodic)
    except LocationError as exc:
        raise LocationError(f"inclusion node could not be located: {exc}") from None
    return SubstitutionMatrix(expand_dofs(scalar, dofs_per_node), scalar, dofs_per_node, periodic, cells)


# --------------------------------------------------------------------------
# pixelization


def pixelize(grid: StructuredGrid, inclusion_mesh: UnstructuredMesh, periodic: bool = False) -> np.ndarray:
    """Sorted indices of grid cells holding at least one inclusion node."""
    if inclusion_mesh.n_nodes == 0:
        return np.zeros(0, dtype=np.int64)
    cells, _ = locate_points(grid, inclusion_mesh.nodes, periodic or inclusion_mesh.periodic_wrap)
    return np.unique(cells)


def _lattice(element_type: str, samples: int) -> np.ndarray:
    """Barycentric (simplex) or tensor lattice with at least ``samples`` points."""
    if element_type in ("tri3", "tet4"):
        d = 2 if element_type == "tri3" else 3
        m = 1
        while math.comb(m + d, d) < samples:
            m += 1
        idx = np.stack(np.meshgrid(*[np.arange(m + 1)] * d, indexing="ij"), -1).reshape(-1, d)
        idx = idx[idx.sum(axis=1) <= m]
        return idx / m
    d = 2 if element_type == "qua4" else 3
    m = 1
    while (m + 1) ** d < samples:
        m += 1
    t = np.linspace(-1.0, 1.0, m + 1)
    return np.stack(np.meshgrid(*[t] * d, indexing="ij"), -1).reshape(-1, d)


@dataclass
class PixelizationReport:
    covered_cells: np.ndarray
    eta: float
    enveloping: bool
    gap_cells: list[int]
    h_mat: float
    h_inc: float
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "covered_cells": [int(c) for c in self.covered_cells],
            "eta": self.eta,
            "enveloping": self.enveloping,
            "gap_cells": [int(c) for c in self.gap_cells],
            "h_mat": self.h_mat,
            "h_inc": self.h_inc,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def mask(self, grid: StructuredGrid) -> np.ndarray:
        """Per-cell flag: 0 empty, 1 covered pixel, 2 gap."""
        m = np.zeros(grid.n_cells, dtype=np.int64)
        m[self.covered_cells] = 1
        m[np.asarray(self.gap_cells, dtype=np.int64)] = 2
        return m


def check_enveloping(grid: StructuredGrid, inclusion_mesh: UnstructuredMesh,
                     samples_per_element: int = 10, periodic: bool = False) -> PixelizationReport:
    """Pixelization with sampled gap detection and the mesh-size ratio eta.

    Each element is sampled on a lattice of at least ``samples_per_element``
    points (10 gives the cubic barycentric lattice of a triangle); any cell
    hit by a sample but not holding an inclusion node is reported as a gap.
    """
    if samples_per_element < 1:
        raise ValueError("samples_per_element must be >= 1")
    periodic = periodic or inclusion_mesh.periodic_wrap
    covered = pixelize(grid, inclusion_mesh, periodic)
    h_mat = grid.characteristic_length
    h_inc = inclusion_mesh.characteristic_length()
    eta = h_mat / h_inc if h_inc > 0 else math.inf
    hit = []
    for b in inclusion_mesh.blocks:
        if not len(b):
            continue
        lat = _lattice(b.type, samples_per_element)
        N = shape_values(b.type, lat)
        pts = np.einsum("qa,ead->eqd", N, inclusion_mesh.block_coords(b)).reshape(-1, grid.dim)
        cells, _ = locate_points(grid, pts, periodic)
        hit.append(cells)
    hit = np.unique(np.concatenate(hit)) if hit else np.zeros(0, dtype=np.int64)
    gaps = np.setdiff1d(hit, covered)
    warnings = []
    if eta < 1:
        msg = f"eta = h_mat/h_inc = {eta:.3g} < 1: inclusion mesh coarser than the grid"
        log.warning(msg)
        warnings.append(msg)
    return PixelizationReport(covered, eta, gaps.size == 0, gaps.tolist(), h_mat, h_inc, warnings)
