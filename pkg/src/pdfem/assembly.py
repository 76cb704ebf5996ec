"""Global sparse operators for the phantom-domain system.

All matrices are ``scipy.sparse.csr_matrix``. Elastic DOFs are numbered
node-major, component-minor: ``dof = node * dim + component``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import elements as el
from .meshkit.grid import StructuredGrid, _parse_side
from .meshkit.mesh import UnstructuredMesh


@dataclass(frozen=True)
class DofMap:
    """Grid DOF numbering, optionally with periodic identification.

    ``node_map[i]`` is the reduced node carrying node ``i``; without
    periodicity it is the identity.
    """

    ncomp: int
    n_nodes: int
    node_map: np.ndarray | None = None

    @property
    def physics(self) -> str:
        return "thermal" if self.ncomp == 1 else "elastic"

    @property
    def periodic(self) -> bool:
        return self.node_map is not None

    @property
    def n_full(self) -> int:
        return self.ncomp * self.n_nodes

    @property
    def n_reduced_nodes(self) -> int:
        return self.n_nodes if self.node_map is None else int(self.node_map.max()) + 1

    @property
    def n_dofs(self) -> int:
        return self.ncomp * self.n_reduced_nodes

    @cached_property
    def master(self) -> np.ndarray:
        """Full-numbering master DOF of every full DOF (idempotent map)."""
        if self.node_map is None:
            return np.arange(self.n_full)
        first = np.full(self.n_reduced_nodes, -1)
        # the lowest-numbered node of each class is the min-face master
        order = np.arange(self.n_nodes)[::-1]
        first[self.node_map[order]] = order
        master_node = first[self.node_map]
        return (master_node[:, None] * self.ncomp + np.arange(self.ncomp)).ravel()

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """``P`` (n_full x n_dofs) with ``u_full = P u_reduced``."""
        if self.node_map is None:
            return sp.identity(self.n_full, format="csr")
        P = sp.csr_matrix(
            (np.ones(self.n_nodes), (np.arange(self.n_nodes), self.node_map)),
            shape=(self.n_nodes, self.n_reduced_nodes),
        )
        return expand(P, self.ncomp)

    def reduce_matrix(self, K: sp.spmatrix) -> sp.csr_matrix:
        if self.node_map is None:
            return sp.csr_matrix(K)
        P = self.prolongation
        return symmetrize(P.T @ K @ P)

    def reduce_vector(self, v: np.ndarray) -> np.ndarray:
        """Fold a full-numbering load vector onto the reduced DOFs."""
        return v if self.node_map is None else self.prolongation.T @ v

    def expand_vector(self, u: np.ndarray) -> np.ndarray:
        return u if self.node_map is None else self.prolongation @ u


def grid_dofmap(grid: StructuredGrid, ncomp: int = 1) -> DofMap:
    return DofMap(ncomp, grid.n_nodes)


def expand(S: sp.spmatrix, ncomp: int) -> sp.csr_matrix:
    return sp.csr_matrix(S) if ncomp == 1 else sp.kron(S, sp.identity(ncomp), format="csr")


def symmetrize(K: sp.spmatrix) -> sp.csr_matrix:
    K = sp.csr_matrix(K)
    out = ((K + K.T) * 0.5).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def element_dofs(conn: np.ndarray, ncomp: int) -> np.ndarray:
    if ncomp == 1:
        return conn
    return (conn[..., None] * ncomp + np.arange(ncomp)).reshape(conn.shape[0], -1)


def scatter(dofs: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    """Sum local matrices into an ``n x n`` CSR matrix.

    ``local`` is either one matrix shared by every element or a stack.
    """
    nd = dofs.shape[1]
    rows = np.broadcast_to(dofs[:, :, None], (dofs.shape[0], nd, nd)).ravel()
    cols = np.broadcast_to(dofs[:, None, :], (dofs.shape[0], nd, nd)).ravel()
    vals = np.broadcast_to(local, (dofs.shape[0], nd, nd)).ravel()
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    K.sum_duplicates()
    K.sort_indices()
    return K


def material_tensor(material, dim: int, model: str = "plane_strain") -> np.ndarray:
    return material.tensor(dim, model)


# --------------------------------------------------------------------------
# stiffness


def assemble_Kmat(grid: StructuredGrid, material, dofmap: DofMap | None = None,
                  model: str = "plane_strain") -> sp.csr_matrix:
    """Homogeneous-material stiffness on the grid, reduced by ``dofmap``.

    All cells are congruent, so one local matrix is integrated and scattered.
    """
    ncomp = el.ncomp_of(material, grid.dim)
    dofmap = dofmap or grid_dofmap(grid, ncomp)
    if dofmap.ncomp != ncomp or dofmap.n_nodes != grid.n_nodes:
        raise ValueError("DofMap does not match grid and material")
    ke = el.local_stiffness(grid.element_type, grid.cell_geometry(), material_tensor(material, grid.dim, model), ncomp)
    K = scatter(element_dofs(grid.cell_nodes, ncomp), ke, dofmap.n_full)
    return dofmap.reduce_matrix(K)


def assemble_mesh_stiffness(mesh: UnstructuredMesh, tensors, ncomp: int) -> sp.csr_matrix:
    """Stiffness over an unstructured mesh.

    ``tensors`` is a single constitutive tensor or a ``{tag: tensor}`` map.
    """
    n = mesh.n_nodes * ncomp
    K = sp.csr_matrix((n, n))
    for b in mesh.blocks:
        if not len(b):
            continue
        if isinstance(tensors, dict):
            for tag in np.unique(b.tags):
                if tag not in tensors:
                    raise ValueError(f"no material for physical tag {tag}")
                sel = b.tags == tag
                ke = el.local_stiffness(b.type, mesh.nodes[b.connectivity[sel]], tensors[tag], ncomp)
                K = K + scatter(element_dofs(b.connectivity[sel], ncomp), ke, n)
        else:
            ke = el.local_stiffness(b.type, mesh.block_coords(b), tensors, ncomp)
            K = K + scatter(element_dofs(b.connectivity, ncomp), ke, n)
    return symmetrize(K)


def assemble_Kinc(inclusion_mesh: UnstructuredMesh, material_inc, material_mat,
                  model: str = "plane_strain") -> sp.csr_matrix:
    """Inclusion-mesh matrix of the material difference (inclusion - matrix).

    The result is indefinite or negative semi-definite when the inclusion is
    softer than the matrix; that is expected.
    """
    if type(material_inc) is not type(material_mat):
        raise ValueError("inclusion and matrix materials must share the same physics")
    dim = inclusion_mesh.dim
    ncomp = el.ncomp_of(material_mat, dim)
    diff = material_tensor(material_inc, dim, model) - material_tensor(material_mat, dim, model)
    return assemble_mesh_stiffness(inclusion_mesh, diff, ncomp)


def combine(K_mat: sp.spmatrix, S, K_inc: sp.spmatrix) -> sp.csr_matrix:
    """``K_mat + S^T K_inc S`` (symmetrized)."""
    S = getattr(S, "matrix", S)
    if S.shape[0] != K_inc.shape[0] or S.shape[1] != K_mat.shape[0] or K_mat.shape[0] != K_mat.shape[1]:
        raise ValueError(
            f"incompatible shapes: K_mat {K_mat.shape}, S {S.shape}, K_inc {K_inc.shape}"
        )
    S = sp.csr_matrix(S)
    return symmetrize(K_mat + S.T @ (K_inc @ S))


# --------------------------------------------------------------------------
# mass


def assemble_mass(grid_or_mesh, ncomp: int = 1) -> sp.csr_matrix:
    """Consistent mass matrix, block-diagonal per component for ``ncomp > 1``."""
    if isinstance(grid_or_mesh, DofMap):
        raise TypeError("pass a grid or mesh, then ncomp")
    if isinstance(grid_or_mesh, StructuredGrid):
        g = grid_or_mesh
        me = el.local_mass(g.element_type, g.cell_geometry())
        M = scatter(g.cell_nodes, me, g.n_nodes)
    else:
        mesh = grid_or_mesh
        M = sp.csr_matrix((mesh.n_nodes, mesh.n_nodes))
        for b in mesh.blocks:
            if len(b):
                M = M + scatter(b.connectivity, el.local_mass(b.type, mesh.block_coords(b)), mesh.n_nodes)
    return symmetrize(expand(M, ncomp))


# --------------------------------------------------------------------------
# loads

_FACE_TYPE = {2: "line2", 3: "qua4"}


def _facet_rule(face_type: str):
    x, w = np.polynomial.legendre.leggauss(3)
    if face_type == "line2":
        return x[:, None], w, np.column_stack([(1 - x) / 2, (1 + x) / 2])
    if face_type == "tri3":
        rule = el.quadrature("tri3", 3)
        return rule.points, rule.weights, el.shape_values("tri3", rule.points)
    rule = el.quadrature("qua4", 3)
    return rule.points, rule.weights, el.shape_values("qua4", rule.points)


def _facet_jacobian(face_type: str, x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Surface measure factor at each facet quadrature point, shape (nf, nq)."""
    if face_type == "line2":
        return np.broadcast_to(np.linalg.norm(x[:, 1] - x[:, 0], axis=1)[:, None] / 2, (x.shape[0], ref.shape[0]))
    if face_type == "tri3":
        area2 = np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)
        return np.broadcast_to(area2[:, None], (x.shape[0], ref.shape[0]))
    dref = el.shape_gradients("qua4", ref)  # (nq, 2, 4)
    t = np.einsum("qan,fnd->fqad", dref, x)
    return np.linalg.norm(np.cross(t[:, :, 0], t[:, :, 1]), axis=-1)


def facet_load(face_type: str, facets: np.ndarray, coords: np.ndarray, normals: np.ndarray,
               flux, ncomp: int, n_nodes: int) -> np.ndarray:
    """``int_facet F(x, n) phi_a`` summed into a global vector.

    ``flux`` is a constant (scalar or ncomp-vector) or ``f(x, n) -> (..., ncomp)``.
    """
    L = np.zeros(n_nodes * ncomp)
    if facets.size == 0:
        return L
    ref, w, N = _facet_rule(face_type)
    x = coords[facets]
    xq = np.einsum("qa,fad->fqd", N, x)
    jw = _facet_jacobian(face_type, x, ref) * w
    nq = np.broadcast_to(normals[:, None, :], xq.shape)
    if callable(flux):
        F = np.asarray(flux(xq, nq), float)
    else:
        F = np.broadcast_to(np.asarray(flux, float), xq.shape[:2] + ((ncomp,) if ncomp > 1 else ()))
    F = F.reshape(xq.shape[:2] + (ncomp,))
    local = np.einsum("fqc,qa,fq->fac", F, N, jw)
    dofs = element_dofs(facets, ncomp)
    np.add.at(L, dofs.ravel(), local.reshape(local.shape[0], -1).ravel())
    return L


def _source_load(element_type, conn, coords, source, ncomp, n_nodes):
    rule = el.quadrature(element_type, 3)
    N = el.shape_values(element_type, rule.points)
    x = coords[conn]
    xq = np.einsum("qa,ead->eqd", N, x)
    detw = el.jacobian_determinants(element_type, x, rule) * rule.weights
    f = np.asarray(source(xq) if callable(source) else source, float)
    f = np.broadcast_to(f, xq.shape[:2] + ((ncomp,) if ncomp > 1 else ())).reshape(xq.shape[:2] + (ncomp,))
    local = np.einsum("eqc,qa,eq->eac", f, N, detw)
    L = np.zeros(n_nodes * ncomp)
    np.add.at(L, element_dofs(conn, ncomp).ravel(), local.reshape(local.shape[0], -1).ravel())
    return L


def assemble_load(grid: StructuredGrid, source=None, neumann=None, ncomp: int = 1) -> np.ndarray:
    """Body source plus boundary flux/traction on named grid sides.

    ``neumann`` maps side names (``xmin``, ``xmax``, ``ymin``, ...) to a
    constant or a callable ``F(x, n)``. Unknown or non-boundary sides raise
    ``ValueError``.
    """
    L = np.zeros(grid.n_nodes * ncomp)
    coords = grid.node_coords()
    if source is not None:
        L += _source_load(grid.element_type, grid.cell_nodes, coords, source, ncomp, grid.n_nodes)
    for side, flux in (neumann or {}).items():
        axis, at_max = _parse_side(side, grid.dim)
        facets = grid.side_facets(side)
        normal = np.zeros(grid.dim)
        normal[axis] = 1.0 if at_max else -1.0
        normals = np.broadcast_to(normal, (facets.shape[0], grid.dim))
        L += facet_load(_FACE_TYPE[grid.dim], facets, coords, normals, flux, ncomp, grid.n_nodes)
    return L


def uniform_boundary_load(grid: StructuredGrid, macro: np.ndarray) -> np.ndarray:
    """Load of ``q.n = Q.n`` (vector ``Q``) or ``t = Sigma n`` (tensor) on all sides."""
    macro = np.asarray(macro, float)
    ncomp = 1 if macro.ndim == 1 else grid.dim
    neumann = {}
    for side in ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")[: 2 * grid.dim]:
        axis, at_max = _parse_side(side, grid.dim)
        n = np.zeros(grid.dim)
        n[axis] = 1.0 if at_max else -1.0
        neumann[side] = macro @ n if ncomp > 1 else float(macro @ n)
    return assemble_load(grid, neumann=neumann, ncomp=ncomp)


# --------------------------------------------------------------------------
# unstructured boundaries (conformal reference meshes)

_FACES = {
    "tri3": [(0, 1), (1, 2), (2, 0)],
    "qua4": [(0, 1), (1, 2), (2, 3), (3, 0)],
    "tet4": [(0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2)],
}


def boundary_facets(mesh: UnstructuredMesh):
    """Facets used by exactly one element, with outward unit normals."""
    faces, owners_opposite = [], []
    for b in mesh.blocks:
        if b.type not in _FACES:
            raise ValueError(f"boundary extraction not supported for {b.type}")
        for f in _FACES[b.type]:
            faces.append(b.connectivity[:, list(f)])
            other = [i for i in range(b.connectivity.shape[1]) if i not in f]
            owners_opposite.append(mesh.nodes[b.connectivity[:, other]].mean(axis=1))
    faces = np.vstack(faces)
    inner = np.vstack(owners_opposite)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = counts[inv.ravel()] == 1
    faces, inner = faces[once], inner[once]
    x = mesh.nodes[faces]
    if mesh.dim == 2:
        t = x[:, 1] - x[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
    else:
        n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    flip = np.einsum("fd,fd->f", n, x.mean(axis=1) - inner) < 0
    n[flip] *= -1
    return faces, n


def mesh_boundary_load(mesh: UnstructuredMesh, flux, ncomp: int = 1, facets=None) -> np.ndarray:
    """Neumann load on an unstructured mesh boundary.

    ``facets`` optionally restricts the load to given node tuples, each of
    which must be a boundary facet.
    """
    faces, normals = boundary_facets(mesh)
    if facets is not None:
        want = np.sort(np.atleast_2d(facets), axis=1)
        have = {tuple(r): i for i, r in enumerate(np.sort(faces, axis=1).tolist())}
        idx = []
        for r in want.tolist():
            if tuple(r) not in have:
                raise ValueError(f"facet {r} is not on the mesh boundary")
            idx.append(have[tuple(r)])
        faces, normals = faces[idx], normals[idx]
    face_type = "line2" if mesh.dim == 2 else "tri3"
    return facet_load(face_type, faces, mesh.nodes, normals, flux, ncomp, mesh.n_nodes)


def uniform_mesh_boundary_load(mesh: UnstructuredMesh, macro) -> np.ndarray:
    macro = np.asarray(macro, float)
    if macro.ndim == 1:
        return mesh_boundary_load(mesh, lambda x, n: n @ macro, 1)
    return mesh_boundary_load(mesh, lambda x, n: n @ macro.T, mesh.dim)


def mesh_boundary_nodes(mesh: UnstructuredMesh) -> np.ndarray:
    faces, _ = boundary_facets(mesh)
    return np.unique(faces)


def write_matrix_market(path, K: sp.spmatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(K), comment=comment, symmetry="general")
