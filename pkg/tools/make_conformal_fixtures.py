"""Write the conformal disk-in-square reference meshes to tests/fixtures.

L0 is a Delaunay triangulation of layered points: rings inside the disk,
rings just outside it, a triangular lattice farther out and the square
boundary. Triangles are tagged by centroid (1 matrix, 2 inclusion); no
triangle may have vertices strictly on both sides of the circle. L1 and L2
are uniform red refinements of L0, so the three FE spaces are nested.

Usage: python tools/make_conformal_fixtures.py [outdir]
"""

import math
import sys
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from pdfem.meshkit import UnstructuredMesh, write_msh
from pdfem.meshkit.mesh import CellBlock

CENTER = np.array([0.5, 0.5])
RADIUS = 0.15
H0 = 1 / 40


def ring(radius, h, phase=0.0):
    m = max(6, math.ceil(2 * math.pi * radius / h))
    t = 2 * math.pi * (np.arange(m) + phase) / m
    return CENTER + radius * np.column_stack([np.cos(t), np.sin(t)])


def layered_points(h):
    pts = [CENTER[None], ring(RADIUS, h)]
    n_in = math.ceil(RADIUS / h)
    for k in range(1, n_in):
        pts.append(ring(RADIUS * (1 - k / n_in), h, 0.5 * (k % 2)))
    r_out = [RADIUS + k * h * 0.9 for k in (1, 2)]
    for k, r in enumerate(r_out):
        pts.append(ring(r, h, 0.5 * ((k + 1) % 2)))
    # triangular lattice away from the disk and the boundary
    dy = h * math.sqrt(3) / 2
    lattice = []
    for j, y in enumerate(np.arange(h, 1 - 0.5 * h, dy)):
        xs = np.arange(h + (0.5 * h if j % 2 else 0.0), 1 - 0.5 * h, h)
        lattice.append(np.column_stack([xs, np.full_like(xs, y)]))
    lattice = np.vstack(lattice)
    keep = np.linalg.norm(lattice - CENTER, axis=1) > r_out[-1] + 0.8 * h
    keep &= np.all((lattice > 0.6 * h) & (lattice < 1 - 0.6 * h), axis=1)
    pts.append(lattice[keep])
    m = math.ceil(1 / h)
    t = np.arange(m) / m
    pts += [np.column_stack([t, 0 * t]), np.column_stack([1 + 0 * t, t]),
            np.column_stack([1 - t, 1 + 0 * t]), np.column_stack([0 * t, 1 - t])]
    return np.vstack(pts)


def base_mesh(h):
    nodes = layered_points(h)
    tri = Delaunay(nodes).simplices
    x = nodes[tri]
    area2 = (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1]) - (x[:, 1, 1] - x[:, 0, 1]) * (x[:, 2, 0] - x[:, 0, 0])
    tri = tri[np.abs(area2) > 1e-14]
    area2 = area2[np.abs(area2) > 1e-14]
    tri[area2 < 0] = tri[area2 < 0][:, [0, 2, 1]]
    d = np.linalg.norm(nodes[tri] - CENTER, axis=2) - RADIUS
    tol = 1e-12
    straddle = np.any(d < -tol, axis=1) & np.any(d > tol, axis=1)
    if straddle.any():
        raise SystemExit(f"{straddle.sum()} triangles cross the interface")
    tags = np.where(np.linalg.norm(nodes[tri].mean(axis=1) - CENTER, axis=1) < RADIUS, 2, 1)
    return nodes, tri, tags


def refine(nodes, tri):
    """Red refinement: every triangle into four via edge midpoints."""
    edges = np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = nodes.shape[0] + inv.reshape(3, -1).T
    new_nodes = np.vstack([nodes, nodes[uniq].mean(axis=1)])
    a, b, c = tri.T
    m01, m12, m20 = mid.T
    out = np.vstack([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    return new_nodes, out


def main(outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    nodes, tri, tags = base_mesh(H0)
    for level in range(3):
        mesh = UnstructuredMesh(nodes, (CellBlock("tri3", tri, tags),))
        mesh.validate()
        write_msh(outdir / f"disk_conformal_L{level}.msh", mesh)
        print(f"L{level}: {mesh.n_nodes} nodes, {mesh.n_elements} triangles, "
              f"h = {mesh.characteristic_length():.4f}, inclusion area = {mesh.measure(2):.6f}")
        nodes, tri = refine(nodes, tri)
        tags = np.tile(tags, 4)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "fixtures")
