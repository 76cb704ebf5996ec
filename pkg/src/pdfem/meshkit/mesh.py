from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..elements import (
    ELEMENT_DIM,
    NODES_PER_ELEMENT,
    SIMPLEX,
    QuadratureRule,
    element_measures,
    jacobian_determinants,
    quadrature,
    reference_nodes,
)

MATRIX_TAG = 1
INCLUSION_TAG = 2

_EDGES = {
    "tri3": [(0, 1), (1, 2), (2, 0)],
    "qua4": [(0, 1), (1, 2), (2, 3), (3, 0)],
    "tet4": [(0, 1), (1, 2), (2, 0), (0, 3), (1, 3), (2, 3)],
    "hex8": [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4),
             (0, 4), (1, 5), (2, 6), (3, 7)],
}


class MeshError(ValueError):
    pass


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CellBlock:
    type: str
    connectivity: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        if self.type not in NODES_PER_ELEMENT:
            raise MeshError(f"unsupported element type {self.type!r}")
        conn = _frozen(np.asarray(self.connectivity).reshape(-1, NODES_PER_ELEMENT[self.type]), np.int64)
        tags = np.asarray(self.tags, dtype=np.int64)
        if tags.ndim == 0:
            tags = np.full(conn.shape[0], int(tags))
        if tags.shape != (conn.shape[0],):
            raise MeshError("one physical tag per element required")
        object.__setattr__(self, "connectivity", conn)
        object.__setattr__(self, "tags", _frozen(tags, np.int64))

    def __len__(self) -> int:
        return self.connectivity.shape[0]


@dataclass(frozen=True)
class UnstructuredMesh:
    """Node coordinates plus typed, tagged element blocks.

    ``periodic_wrap`` marks meshes whose nodes may leave the unit cell and
    must be wrapped modulo the domain size when located in a grid.
    """

    nodes: np.ndarray
    blocks: tuple[CellBlock, ...] = field(default_factory=tuple)
    periodic_wrap: bool = False

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 2:
            raise MeshError("nodes must be a (N, dim) array")
        object.__setattr__(self, "nodes", _frozen(nodes, float))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for b in self.blocks:
            if len(b) and (b.connectivity.min() < 0 or b.connectivity.max() >= nodes.shape[0]):
                raise MeshError(f"{b.type} connectivity references a node outside 0..{nodes.shape[0] - 1}")
            if ELEMENT_DIM[b.type] != nodes.shape[1]:
                raise MeshError(f"{b.type} elements need {ELEMENT_DIM[b.type]}D nodes, mesh is {nodes.shape[1]}D")

    @classmethod
    def single(cls, nodes, element_type: str, connectivity, tag: int = INCLUSION_TAG, periodic_wrap=False):
        return cls(nodes, (CellBlock(element_type, connectivity, tag),), periodic_wrap)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return sum(len(b) for b in self.blocks)

    def block_coords(self, block: CellBlock) -> np.ndarray:
        return self.nodes[block.connectivity]

    def element_measures(self) -> np.ndarray:
        parts = [element_measures(b.type, self.block_coords(b)) for b in self.blocks if len(b)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def measure(self, tag: int | None = None) -> float:
        total = 0.0
        for b in self.blocks:
            if not len(b):
                continue
            m = element_measures(b.type, self.block_coords(b))
            total += m.sum() if tag is None else m[b.tags == tag].sum()
        return float(total)

    def characteristic_length(self) -> float:
        """Longest element edge over the whole mesh."""
        best = 0.0
        for b in self.blocks:
            if not len(b):
                continue
            x = self.block_coords(b)
            for i, j in _EDGES[b.type]:
                best = max(best, float(np.linalg.norm(x[:, i] - x[:, j], axis=-1).max()))
        return best

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted node pairs."""
        pairs = [b.connectivity[:, list(e)] for b in self.blocks for e in _EDGES[b.type]]
        if not pairs:
            return np.zeros((0, 2), dtype=np.int64)
        return np.unique(np.sort(np.vstack(pairs), axis=1), axis=0)

    def validate(self) -> None:
        """Raise MeshError unless every element has a positive Jacobian."""
        for b in self.blocks:
            if not len(b):
                continue
            rule = quadrature(b.type) if b.type in SIMPLEX else quadrature(b.type, 2)
            det = jacobian_determinants(b.type, self.block_coords(b), rule)
            # corner points catch bow-tied quads that Gauss points may miss
            if b.type not in SIMPLEX:
                corners = QuadratureRule(reference_nodes(b.type) * (1 - 1e-12), np.ones(2**self.dim))
                det = np.hstack([det, jacobian_determinants(b.type, self.block_coords(b), corners)])
            if np.any(det <= 0):
                bad = int(np.argwhere((det <= 0).any(axis=1))[0, 0])
                raise MeshError(f"{b.type} element {bad} has non-positive Jacobian")

    def select(self, tag: int) -> "UnstructuredMesh":
        """Sub-mesh of elements with ``tag``; unused nodes are dropped."""
        blocks = [(b.type, b.connectivity[b.tags == tag]) for b in self.blocks]
        used = np.unique(np.concatenate([c.ravel() for _, c in blocks] or [np.zeros(0, int)]))
        renum = np.full(self.n_nodes, -1)
        renum[used] = np.arange(used.size)
        return UnstructuredMesh(
            self.nodes[used],
            tuple(CellBlock(t, renum[c], tag) for t, c in blocks if len(c)),
            self.periodic_wrap,
        )


def merge_meshes(meshes) -> UnstructuredMesh:
    """Concatenate meshes without sharing nodes."""
    meshes = list(meshes)
    if not meshes:
        raise MeshError("nothing to merge")
    offset = 0
    nodes, blocks = [], []
    for m in meshes:
        nodes.append(m.nodes)
        blocks.extend(CellBlock(b.type, b.connectivity + offset, b.tags) for b in m.blocks)
        offset += m.n_nodes
    return UnstructuredMesh(np.vstack(nodes), tuple(blocks), any(m.periodic_wrap for m in meshes))


def grid_as_mesh(grid, cell_tags=None) -> UnstructuredMesh:
    """The structured grid viewed as an unstructured qua4/hex8 mesh."""
    tags = MATRIX_TAG if cell_tags is None else np.asarray(cell_tags)
    return UnstructuredMesh(grid.node_coords(), (CellBlock(grid.element_type, grid.cell_nodes, tags),))
