"""Structured grids, inclusion meshes and MSH I/O."""

from .generators import FiberSpec, catmull_rom, gen_disk_mesh, gen_fiber_mesh, gen_square_mesh, two_fiber_specs
from .grid import StructuredGrid, build_structured_grid
from .mesh import (
    INCLUSION_TAG,
    MATRIX_TAG,
    CellBlock,
    MeshError,
    UnstructuredMesh,
    grid_as_mesh,
    merge_meshes,
)
from .msh import MshParseError, format_msh, parse_msh, read_msh, write_msh

__all__ = [
    "INCLUSION_TAG",
    "MATRIX_TAG",
    "CellBlock",
    "FiberSpec",
    "MeshError",
    "MshParseError",
    "StructuredGrid",
    "UnstructuredMesh",
    "build_structured_grid",
    "catmull_rom",
    "format_msh",
    "gen_disk_mesh",
    "gen_fiber_mesh",
    "gen_square_mesh",
    "grid_as_mesh",
    "merge_meshes",
    "parse_msh",
    "read_msh",
    "two_fiber_specs",
    "write_msh",
]
