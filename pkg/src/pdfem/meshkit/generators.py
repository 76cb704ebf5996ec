"""Inclusion mesh generators: disk, square and swept spline fiber."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..elements import jacobian_determinants, quadrature
from .mesh import INCLUSION_TAG, MeshError, UnstructuredMesh

RING_GROWTH = 8  # nodes added per ring in ring triangulations


def _ring_disk(radius: float, n_rings: int, growth: int = RING_GROWTH):
    """Unit-free ring triangulation of a disk centered at the origin.

    Ring ``k`` carries ``growth * k`` equally spaced nodes at radius
    ``k * radius / n_rings``; ring 0 is the center node. Triangles are
    counter-clockwise.
    """
    pts = [np.zeros((1, 2))]
    ring_start = [0]
    for k in range(1, n_rings + 1):
        m = growth * k
        t = 2 * np.pi * np.arange(m) / m
        r = radius * k / n_rings
        ring_start.append(ring_start[-1] + pts[-1].shape[0])
        pts.append(np.column_stack([r * np.cos(t), r * np.sin(t)]))
    nodes = np.vstack(pts)

    tris = []
    for k in range(1, n_rings + 1):
        inner_n = 1 if k == 1 else growth * (k - 1)
        outer_n = growth * k
        i0, o0 = ring_start[k - 1], ring_start[k]
        if k == 1:
            for j in range(outer_n):
                tris.append((i0, o0 + j, o0 + (j + 1) % outer_n))
            continue
        # merge two rings by angle, advancing whichever next node comes first
        i = o = 0
        while i < inner_n or o < outer_n:
            ai = (i + 1) / inner_n
            ao = (o + 1) / outer_n
            a, b = i0 + i % inner_n, o0 + o % outer_n
            if o < outer_n and (i >= inner_n or ao <= ai):
                tris.append((a, b, o0 + (o + 1) % outer_n))
                o += 1
            else:
                tris.append((a, b, i0 + (i + 1) % inner_n))
                i += 1
    tris = np.array(tris, dtype=np.int64)
    x = nodes[tris]
    area2 = (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1]) - (x[:, 1, 1] - x[:, 0, 1]) * (x[:, 2, 0] - x[:, 0, 0])
    flip = area2 < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return nodes, tris


def gen_disk_mesh(center, diameter: float, target_h: float, tag: int = INCLUSION_TAG) -> UnstructuredMesh:
    """Concentric-ring tri3 mesh of a disk with longest edge <= ``target_h``."""
    if not diameter > 0 or not target_h > 0:
        raise MeshError("diameter and target_h must be positive")
    if target_h >= diameter:
        raise MeshError(f"target_h={target_h} >= diameter={diameter}: degenerate disk mesh")
    r = diameter / 2
    min_segments = math.ceil(math.pi * diameter / target_h)
    n_rings = max(1, math.ceil(r / target_h), math.ceil(min_segments / RING_GROWTH))
    while True:
        nodes, tris = _ring_disk(r, n_rings)
        mesh = UnstructuredMesh.single(nodes + np.asarray(center, float), "tri3", tris, tag)
        if mesh.characteristic_length() <= target_h:
            return mesh
        n_rings += 1


def gen_square_mesh(center, side: float, target_h: float, element: str = "qua4",
                    tag: int = INCLUSION_TAG) -> UnstructuredMesh:
    """Structured tiling of an axis-aligned square (qua4, or tri3 halves)."""
    if not side > 0 or not target_h > 0:
        raise MeshError("side and target_h must be positive")
    if target_h >= side:
        raise MeshError(f"target_h={target_h} >= side={side}: degenerate square mesh")
    if element not in ("qua4", "tri3"):
        raise MeshError(f"square tiling supports qua4 or tri3, not {element!r}")
    m = math.ceil(side / target_h - 1e-9)
    lo = np.asarray(center, float) - side / 2
    t = np.arange(m + 1) / m * side
    X, Y = np.meshgrid(lo[0] + t, lo[1] + t, indexing="ij")
    nodes = np.column_stack([X.ravel(order="F"), Y.ravel(order="F")])
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    n0 = (i + (m + 1) * j).ravel(order="F")
    quads = np.column_stack([n0, n0 + 1, n0 + m + 2, n0 + m + 1])
    if element == "qua4":
        return UnstructuredMesh.single(nodes, "qua4", quads, tag)
    tris = np.vstack([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    return UnstructuredMesh.single(nodes, "tri3", tris, tag)


# --------------------------------------------------------------------------
# swept fibers


@dataclass(frozen=True)
class FiberSpec:
    """Tube of circular section swept along a Catmull-Rom centerline.

    With ``periodic_wrap`` the first and last control points must differ by
    a lattice vector; the centerline is then extended periodically so the
    tube joins itself across the cell faces.
    """

    control_points: tuple
    radius: float
    axial_subdivisions: int = 30
    circumferential_subdivisions: int = 16
    periodic_wrap: bool = False

    def __post_init__(self):
        pts = np.asarray(self.control_points, float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
            raise MeshError("a fiber needs at least 2 three-dimensional control points")
        if not self.radius > 0:
            raise MeshError("fiber radius must be positive")
        if self.axial_subdivisions < 1:
            raise MeshError("axial_subdivisions must be >= 1")
        if self.circumferential_subdivisions < 3:
            raise MeshError("circumferential_subdivisions must be >= 3")
        object.__setattr__(self, "control_points", tuple(map(tuple, pts.tolist())))


def catmull_rom(control_points, n_samples: int, periodic: bool = False):
    """Uniform Catmull-Rom samples and unit tangents along the whole curve.

    End tangents use linearly extrapolated phantom points, or the periodic
    continuation when ``periodic`` is set.
    """
    P = np.asarray(control_points, float)
    if periodic:
        shift = P[-1] - P[0]
        before = P[-2] - shift
        after = P[1] + shift
    else:
        before = 2 * P[0] - P[1]
        after = 2 * P[-1] - P[-2]
    Q = np.vstack([before, P, after])
    nseg = P.shape[0] - 1
    s = np.linspace(0.0, nseg, n_samples)
    seg = np.minimum(s.astype(int), nseg - 1)
    t = (s - seg)[:, None]
    p0, p1, p2, p3 = Q[seg], Q[seg + 1], Q[seg + 2], Q[seg + 3]
    m1, m2 = (p2 - p0) / 2, (p3 - p1) / 2
    h00, h10, h01, h11 = 2 * t**3 - 3 * t**2 + 1, t**3 - 2 * t**2 + t, -2 * t**3 + 3 * t**2, t**3 - t**2
    pos = h00 * p1 + h10 * m1 + h01 * p2 + h11 * m2
    d00, d10, d01, d11 = 6 * t**2 - 6 * t, 3 * t**2 - 4 * t + 1, -6 * t**2 + 6 * t, 3 * t**2 - 2 * t
    tan = d00 * p1 + d10 * m1 + d01 * p2 + d11 * m2
    norm = np.linalg.norm(tan, axis=1, keepdims=True)
    if np.any(norm < 1e-14):
        raise MeshError("centerline has a stationary point; tangent undefined")
    return pos, tan / norm


def parallel_transport_frames(tangents: np.ndarray):
    """Normals and binormals transported along the tangents (no twist)."""
    t0 = tangents[0]
    helper = np.eye(3)[np.argmin(np.abs(t0))]
    n = np.cross(t0, helper)
    n /= np.linalg.norm(n)
    normals = [n]
    for a, b in zip(tangents[:-1], tangents[1:]):
        axis = np.cross(a, b)
        s = np.linalg.norm(axis)
        c = float(np.clip(a @ b, -1.0, 1.0))
        if s > 1e-14:
            k = axis / s
            n = n * c + np.cross(k, n) * s + k * (k @ n) * (1 - c)
        n = n - (n @ b) * b
        n /= np.linalg.norm(n)
        normals.append(n)
    normals = np.array(normals)
    return normals, np.cross(tangents, normals)


def _split_prisms(bottom: np.ndarray, top: np.ndarray) -> np.ndarray:
    """Split prisms (a,b,c | a',b',c') into 3 tets with a vertex-order rule.

    Sorting the base triangle by global index makes diagonals on shared
    quad faces agree between neighbouring prisms.
    """
    order = np.argsort(bottom, axis=1)
    a, b, c = (np.take_along_axis(bottom, order[:, [i]], 1)[:, 0] for i in range(3))
    A, B, C = (np.take_along_axis(top, order[:, [i]], 1)[:, 0] for i in range(3))
    return np.stack(
        [np.column_stack([a, b, c, A]), np.column_stack([b, c, A, B]), np.column_stack([c, A, B, C])],
        axis=1,
    ).reshape(-1, 4)


def gen_fiber_mesh(spec: FiberSpec, tag: int = INCLUSION_TAG) -> UnstructuredMesh:
    """Tet4 mesh of a swept fiber (see FiberSpec)."""
    nc = spec.circumferential_subdivisions
    n_rings = max(1, math.ceil(nc / RING_GROWTH))
    growth = max(3, math.ceil(nc / n_rings))
    sect_nodes, sect_tris = _ring_disk(spec.radius, n_rings, growth)
    ns = sect_nodes.shape[0]

    centers, tangents = catmull_rom(spec.control_points, spec.axial_subdivisions + 1, spec.periodic_wrap)
    normals, binormals = parallel_transport_frames(tangents)
    nodes = (
        centers[:, None, :]
        + sect_nodes[None, :, 0, None] * normals[:, None, :]
        + sect_nodes[None, :, 1, None] * binormals[:, None, :]
    ).reshape(-1, 3)

    tets = []
    for i in range(spec.axial_subdivisions):
        tets.append(_split_prisms(sect_tris + i * ns, sect_tris + (i + 1) * ns))
    tets = np.vstack(tets)

    # compare each tet with its image in a straight prism stack expressed in
    # the (normal, binormal, tangent) frame; a sign change means the sweep
    # folded onto itself
    flat = np.vstack([np.column_stack([sect_nodes, np.full(ns, z)]) for z in (0.0, 1.0)])
    ref_sign = np.tile(np.sign(_signed_volumes(flat, _split_prisms(sect_tris, sect_tris + ns))),
                       spec.axial_subdivisions)
    if np.any(_signed_volumes(nodes, tets) * ref_sign <= 0):
        raise MeshError("self-intersecting fiber sweep: curvature radius below the fiber radius")
    flip = ref_sign < 0
    tets[flip] = tets[flip][:, [1, 0, 2, 3]]
    mesh = UnstructuredMesh.single(nodes, "tet4", tets, tag, periodic_wrap=spec.periodic_wrap)
    det = jacobian_determinants("tet4", mesh.block_coords(mesh.blocks[0]), quadrature("tet4"))
    if np.any(det <= 0):
        raise MeshError("self-intersecting fiber sweep: negative Jacobian")
    return mesh


def _signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    x = nodes[tets]
    return np.einsum("ei,ei->e", np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), x[:, 3] - x[:, 0])


def two_fiber_specs(radius: float = 0.1, axial_subdivisions: int = 120, circumferential_subdivisions: int = 40,
                    amplitude: float = 0.08, n_control: int = 9) -> tuple[FiberSpec, FiberSpec]:
    """Two wavy, periodically wrapping fibers in the unit cube.

    Fiber A runs along x near ``z = 0.3``; fiber B runs along y near
    ``z = 0.7``. Both centerlines are sampled sine waves whose first and
    last control points differ by one cell length, so each fiber joins its
    periodic image.
    """
    s = np.linspace(0.0, 1.0, n_control)
    w = 2 * np.pi * s
    a = np.column_stack([s, 0.5 + amplitude * np.sin(w), 0.3 + 0.5 * amplitude * np.cos(w)])
    b = np.column_stack([0.5 + amplitude * np.cos(w), s, 0.7 + 0.5 * amplitude * np.sin(w)])
    kw = dict(radius=radius, axial_subdivisions=axial_subdivisions,
              circumferential_subdivisions=circumferential_subdivisions, periodic_wrap=True)
    return FiberSpec(a, **kw), FiberSpec(b, **kw)
