"""Gmsh MSH 2.2 ASCII reader and writer.

Only tri3 (2), qua4 (3), tet4 (4) and hex8 (5) elements are kept, and only
those of the highest dimension present; lines, points and other element
types are dropped. The first element tag is the physical tag.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from ..elements import ELEMENT_DIM, NODES_PER_ELEMENT
from .mesh import CellBlock, MeshError, UnstructuredMesh

GMSH_TYPES = {2: "tri3", 3: "qua4", 4: "tet4", 5: "hex8"}
GMSH_CODES = {v: k for k, v in GMSH_TYPES.items()}


class MshParseError(MeshError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = f"{source or '<msh>'}:{line}: " if line is not None else ""
        super().__init__(where + message)


class _Lines:
    def __init__(self, text_stream, source):
        self._it = iter(text_stream)
        self.lineno = 0
        self.source = source

    def next(self, what: str) -> str:
        for raw in self._it:
            self.lineno += 1
            line = raw.strip()
            if line:
                return line
        raise MshParseError(f"unexpected end of file while reading {what}", self.lineno + 1, self.source)

    def error(self, message: str) -> MshParseError:
        return MshParseError(message, self.lineno, self.source)

    def ints(self, line: str, what: str) -> list[int]:
        try:
            return [int(tok) for tok in line.split()]
        except ValueError:
            raise self.error(f"malformed {what}: {line!r}") from None

    def expect(self, keyword: str) -> None:
        line = self.next(keyword)
        if line != keyword:
            raise self.error(f"expected {keyword}, found {line!r}")


def parse_msh(text_stream, source: str | None = None) -> UnstructuredMesh:
    """Parse MSH 2.2 ASCII text from an iterable of lines (file or StringIO)."""
    if isinstance(text_stream, str):
        text_stream = io.StringIO(text_stream)
    lines = _Lines(text_stream, source)
    seen_format = False
    node_ids = coords = None
    raw_elements = None

    while True:
        try:
            header = lines.next("section header")
        except MshParseError:
            if not seen_format:
                raise
            break
        if not header.startswith("$"):
            raise lines.error(f"expected a section header, found {header!r}")
        name = header[1:]
        if name == "MeshFormat":
            parts = lines.next("$MeshFormat").split()
            if len(parts) != 3:
                raise lines.error("malformed $MeshFormat line")
            version, file_type = parts[0], parts[1]
            if not version.startswith("2."):
                raise lines.error(f"unsupported MSH version {version}; only 2.2 ASCII is supported")
            if file_type != "0":
                raise lines.error("binary MSH files are not supported")
            lines.expect("$EndMeshFormat")
            seen_format = True
        elif not seen_format:
            raise lines.error("$MeshFormat must come first")
        elif name == "Nodes":
            node_ids, coords = _read_nodes(lines)
        elif name == "Elements":
            raw_elements = _read_elements(lines)
        elif name.startswith("End"):
            raise lines.error(f"unmatched {header}")
        else:
            end = "$End" + name
            while lines.next(end) != end:
                pass

    if coords is None:
        raise MshParseError("missing $Nodes section", lines.lineno, source)
    if raw_elements is None:
        raise MshParseError("missing $Elements section", lines.lineno, source)
    return _build(node_ids, coords, raw_elements, source)


def _read_nodes(lines: _Lines):
    count = lines.ints(lines.next("node count"), "node count")
    if len(count) != 1 or count[0] < 0:
        raise lines.error("malformed node count")
    ids = np.empty(count[0], dtype=np.int64)
    xyz = np.empty((count[0], 3))
    for k in range(count[0]):
        parts = lines.next("node").split()
        if len(parts) != 4:
            raise lines.error(f"node line needs 4 fields, got {len(parts)}")
        try:
            ids[k] = int(parts[0])
            xyz[k] = [float(p) for p in parts[1:]]
        except ValueError:
            raise lines.error(f"malformed node line {' '.join(parts)!r}") from None
    lines.expect("$EndNodes")
    if np.unique(ids).size != ids.size:
        raise lines.error("duplicate node tags in $Nodes")
    return ids, xyz


def _read_elements(lines: _Lines):
    count = lines.ints(lines.next("element count"), "element count")
    if len(count) != 1 or count[0] < 0:
        raise lines.error("malformed element count")
    out = []
    for _ in range(count[0]):
        vals = lines.ints(lines.next("element"), "element line")
        if len(vals) < 3 or vals[2] < 0 or len(vals) < 3 + vals[2]:
            raise lines.error("element line too short")
        etype, ntags = vals[1], vals[2]
        tags = vals[3:3 + ntags]
        conn = vals[3 + ntags:]
        if etype in GMSH_TYPES and len(conn) != NODES_PER_ELEMENT[GMSH_TYPES[etype]]:
            raise lines.error(f"{GMSH_TYPES[etype]} element needs {NODES_PER_ELEMENT[GMSH_TYPES[etype]]} nodes, got {len(conn)}")
        out.append((lines.lineno, etype, tags[0] if tags else 0, conn))
    lines.expect("$EndElements")
    return out


def _build(node_ids, coords, raw_elements, source) -> UnstructuredMesh:
    index = {int(t): i for i, t in enumerate(node_ids)}
    kept = [e for e in raw_elements if e[1] in GMSH_TYPES]
    dim = max((ELEMENT_DIM[GMSH_TYPES[e[1]]] for e in kept), default=None)
    if dim is None:
        dim = 3 if np.any(coords[:, 2] != 0) else 2
    blocks: dict[str, tuple[list, list]] = {}
    for lineno, etype, tag, conn in kept:
        name = GMSH_TYPES[etype]
        if ELEMENT_DIM[name] != dim:
            continue
        try:
            nodes = [index[c] for c in conn]
        except KeyError as exc:
            raise MshParseError(f"element references undefined node {exc.args[0]}", lineno, source) from None
        c_list, t_list = blocks.setdefault(name, ([], []))
        c_list.append(nodes)
        t_list.append(tag)
    if dim == 2 and np.any(coords[:, 2] != 0):
        raise MshParseError("2D elements with non-zero z coordinates are not supported", None, source)
    cell_blocks = tuple(CellBlock(name, np.array(c), np.array(t)) for name, (c, t) in blocks.items())
    return UnstructuredMesh(coords[:, :dim].copy(), cell_blocks)


def read_msh(path) -> UnstructuredMesh:
    path = Path(path)
    with path.open() as fh:
        return parse_msh(fh, source=str(path))


def format_msh(mesh: UnstructuredMesh) -> str:
    """MSH 2.2 ASCII text; coordinates are written round-trip exact."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_nodes)]
    xyz = np.zeros((mesh.n_nodes, 3))
    xyz[:, : mesh.dim] = mesh.nodes
    out.extend(f"{i + 1} {x:.16e} {y:.16e} {z:.16e}" for i, (x, y, z) in enumerate(xyz.tolist()))
    out += ["$EndNodes", "$Elements", str(mesh.n_elements)]
    k = 1
    for b in mesh.blocks:
        code = GMSH_CODES[b.type]
        for conn, tag in zip((b.connectivity + 1).tolist(), b.tags.tolist()):
            out.append(f"{k} {code} 2 {tag} {tag} " + " ".join(map(str, conn)))
            k += 1
    out.append("$EndElements")
    return "\n".join(out) + "\n"


def write_msh(path, mesh: UnstructuredMesh) -> None:
    Path(path).write_text(format_msh(mesh))
