"""Axis-aligned structured grid ("phantom host").

Node and cell numbering is lexicographic with the x index running fastest:
``node = i + (nx+1) * (j + (ny+1) * k)`` and ``cell = i + nx * (j + ny * k)``.
Cell-local node order follows the qua4/hex8 reference elements, so cell
(1, 1) of a 3x3 grid has nodes 5, 6, 10, 9.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

_CORNERS = {
    2: np.array([[0, 0], [1, 0], [1, 1], [0, 1]]),
    3: np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                 [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]),
}
SIDES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


@dataclass(frozen=True)
class StructuredGrid:
    dim: int
    resolution: tuple[int, ...]
    origin: tuple[float, ...]
    lengths: tuple[float, ...]

    @property
    def element_type(self) -> str:
        return "qua4" if self.dim == 2 else "hex8"

    @cached_property
    def h(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=float) / np.asarray(self.resolution)

    @property
    def characteristic_length(self) -> float:
        return float(self.h.max())

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.resolution)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    # index maps -------------------------------------------------------------
    def node_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return np.ravel_multi_index(tuple(np.moveaxis(ijk, -1, 0)), self.node_shape, order="F")

    def node_ijk(self, index) -> np.ndarray:
        return np.stack(np.unravel_index(index, self.node_shape, order="F"), axis=-1)

    def cell_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return np.ravel_multi_index(tuple(np.moveaxis(ijk, -1, 0)), self.resolution, order="F")

    def cell_ijk(self, index) -> np.ndarray:
        return np.stack(np.unravel_index(index, self.resolution, order="F"), axis=-1)

    # geometry ---------------------------------------------------------------
    def node_coords(self) -> np.ndarray:
        ijk = self.node_ijk(np.arange(self.n_nodes))
        return np.asarray(self.origin) + ijk * self.h

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """Connectivity ``(n_cells, 2**dim)`` in reference-element order."""
        ijk = self.cell_ijk(np.arange(self.n_cells))
        conn = self.node_index(ijk[:, None, :] + _CORNERS[self.dim][None])
        conn.setflags(write=False)
        return conn

    def cell_geometry(self) -> np.ndarray:
        """Node coordinates of cell 0; every cell is a translate of it."""
        return np.asarray(self.origin) + _CORNERS[self.dim] * self.h

    def cell_centers(self) -> np.ndarray:
        ijk = self.cell_ijk(np.arange(self.n_cells))
        return np.asarray(self.origin) + (ijk + 0.5) * self.h

    def side_nodes(self, side: str) -> np.ndarray:
        axis, at_max = _parse_side(side, self.dim)
        ijk = self.node_ijk(np.arange(self.n_nodes))
        target = self.resolution[axis] if at_max else 0
        return np.flatnonzero(ijk[:, axis] == target)

    def boundary_nodes(self) -> np.ndarray:
        ijk = self.node_ijk(np.arange(self.n_nodes))
        on = np.zeros(self.n_nodes, dtype=bool)
        for a, n in enumerate(self.resolution):
            on |= (ijk[:, a] == 0) | (ijk[:, a] == n)
        return np.flatnonzero(on)

    def side_facets(self, side: str) -> np.ndarray:
        """Boundary facets on ``side`` as node lists (line2 in 2D, qua4 in 3D).

        Facet nodes are ordered counter-clockwise within the facet plane.
        """
        axis, at_max = _parse_side(side, self.dim)
        others = [a for a in range(self.dim) if a != axis]
        counts = [self.resolution[a] for a in others]
        idx = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), -1).reshape(-1, len(others))
        if self.dim == 2:
            offsets = np.array([[0], [1]])
        else:
            offsets = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
        ijk = np.zeros((idx.shape[0], offsets.shape[0], self.dim), dtype=int)
        ijk[..., others] = idx[:, None, :] + offsets[None]
        ijk[..., axis] = self.resolution[axis] if at_max else 0
        return self.node_index(ijk)

    def periodic_node_map(self) -> np.ndarray:
        """Reduced index of every node after identifying opposite faces.

        Max-face nodes map to their min-face images; edges and corners map
        transitively to a single master. Masters are numbered like cells.
        """
        ijk = self.node_ijk(np.arange(self.n_nodes)) % np.asarray(self.resolution)
        return self.cell_index(ijk)


def _parse_side(side: str, dim: int) -> tuple[int, bool]:
    if side not in SIDES[: 2 * dim]:
        raise ValueError(f"{side!r} is not a boundary side of a {dim}D grid")
    return "xyz".index(side[0]), side.endswith("max")


def build_structured_grid(dim: int, resolution, origin=None, side_lengths=None) -> StructuredGrid:
    """Create a grid with ``resolution`` cells per axis (int or per-axis tuple)."""
    if dim not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {dim}")
    res = np.broadcast_to(np.asarray(resolution), (dim,))
    if not np.all(res == np.round(res)) or np.any(res < 1):
        raise ValueError(f"resolution must be integers >= 1, got {resolution}")
    org = np.zeros(dim) if origin is None else np.broadcast_to(np.asarray(origin, float), (dim,))
    lengths = np.ones(dim) if side_lengths is None else np.broadcast_to(np.asarray(side_lengths, float), (dim,))
    if np.any(lengths <= 0) or not np.all(np.isfinite(lengths)):
        raise ValueError(f"side lengths must be positive, got {side_lengths}")
    return StructuredGrid(
        dim,
        tuple(int(r) for r in res),
        tuple(float(o) for o in org),
        tuple(float(s) for s in lengths),
    )
