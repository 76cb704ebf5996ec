"""Legacy ASCII VTK writers plus small JSON/CSV helpers."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .meshkit.grid import StructuredGrid
from .meshkit.mesh import UnstructuredMesh

VTK_CELL_TYPES = {"tri3": 5, "qua4": 9, "tet4": 10, "hex8": 12}


def _name(key: str) -> str:
    return "".join(c if c.isalnum() or c in "_-" else "_" for c in key) or "field"


def _fmt(values) -> list[str]:
    return [" ".join(f"{v:.10g}" for v in row) for row in values]


def _data_section(kind: str, count: int, fields: dict) -> list[str]:
    if not fields:
        return []
    out = [f"{kind} {count}"]
    for key, arr in fields.items():
        a = np.asarray(arr)
        if a.shape[0] != count:
            raise ValueError(f"field {key!r} has {a.shape[0]} values, expected {count}")
        if a.ndim == 1:
            dtype = "int" if np.issubdtype(a.dtype, np.integer) else "double"
            out += [f"SCALARS {_name(key)} {dtype} 1", "LOOKUP_TABLE default"]
            out += [str(int(v)) if dtype == "int" else f"{v:.10g}" for v in a.tolist()]
        elif a.ndim == 2 and a.shape[1] in (2, 3):
            v = np.zeros((count, 3))
            v[:, : a.shape[1]] = a
            out.append(f"VECTORS {_name(key)} double")
            out += _fmt(v)
        else:
            out.append(f"FIELD {_name(key)}_data 1")
            flat = a.reshape(count, -1)
            out.append(f"{_name(key)} {flat.shape[1]} {count} double")
            out += _fmt(flat)
    return out


def vtk_grid_text(grid: StructuredGrid, point_data=None, cell_data=None, title: str = "pdfem grid") -> str:
    """``DATASET STRUCTURED_POINTS`` text; node order is x fastest."""
    dims = list(grid.node_shape) + [1] * (3 - grid.dim)
    org = list(grid.origin) + [0.0] * (3 - grid.dim)
    spacing = list(grid.h) + [1.0] * (3 - grid.dim)
    lines = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(map(str, dims)),
        "ORIGIN " + " ".join(f"{v:.16g}" for v in org),
        "SPACING " + " ".join(f"{v:.16g}" for v in spacing),
    ]
    lines += _data_section("POINT_DATA", grid.n_nodes, point_data or {})
    lines += _data_section("CELL_DATA", grid.n_cells, cell_data or {})
    return "\n".join(lines) + "\n"


def vtk_mesh_text(mesh: UnstructuredMesh, point_data=None, cell_data=None, title: str = "pdfem mesh") -> str:
    """``DATASET UNSTRUCTURED_GRID`` text; cell data follows block order."""
    xyz = np.zeros((mesh.n_nodes, 3))
    xyz[:, : mesh.dim] = mesh.nodes
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += _fmt(xyz)
    size = sum(len(b) * (b.connectivity.shape[1] + 1) for b in mesh.blocks)
    lines.append(f"CELLS {mesh.n_elements} {size}")
    for b in mesh.blocks:
        k = b.connectivity.shape[1]
        lines += [f"{k} " + " ".join(map(str, row)) for row in b.connectivity.tolist()]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    for b in mesh.blocks:
        lines += [str(VTK_CELL_TYPES[b.type])] * len(b)
    cells = {"tag": np.concatenate([b.tags for b in mesh.blocks]) if mesh.blocks else np.zeros(0, int)}
    cells.update(cell_data or {})
    lines += _data_section("POINT_DATA", mesh.n_nodes, point_data or {})
    lines += _data_section("CELL_DATA", mesh.n_elements, cells)
    return "\n".join(lines) + "\n"


def write_vtk_grid(path, grid: StructuredGrid, point_data=None, cell_data=None) -> Path:
    path = Path(path)
    path.write_text(vtk_grid_text(grid, point_data, cell_data))
    return path


def write_vtk_mesh(path, mesh: UnstructuredMesh, point_data=None, cell_data=None) -> Path:
    path = Path(path)
    path.write_text(vtk_mesh_text(mesh, point_data, cell_data))
    return path


def nodal_field(u: np.ndarray, ncomp: int) -> np.ndarray:
    """Node-major DOF vector as ``(n_nodes,)`` or ``(n_nodes, ncomp)``."""
    return np.asarray(u) if ncomp == 1 else np.asarray(u).reshape(-1, ncomp)


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path
