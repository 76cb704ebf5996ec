"""Write the corrupted MSH variants used by the parser robustness tests.

Each variant is a small valid mesh with one defect. ``manifest.json`` maps
the file name to the line number the parser must report.

    python tools/make_corrupt_fixtures.py [OUTDIR]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from pdfem.meshkit import format_msh, gen_square_mesh


def _base() -> list[str]:
    return format_msh(gen_square_mesh((0.5, 0.5), 0.4, 0.2, "tri3")).splitlines()


def _line_of(lines, text) -> int:
    return lines.index(text) + 1


def variants() -> dict[str, tuple[list[str], int]]:
    base = _base()
    first_node = _line_of(base, "$Nodes") + 2
    first_elem = _line_of(base, "$Elements") + 2
    out = {}

    v = list(base)
    v[1] = "4.1 0 8"
    out["bad_version"] = (v, 2)

    v = list(base)
    v[1] = "2.2 1 8"
    out["binary_flag"] = (v, 2)

    v = list(base)
    v.remove("$MeshFormat")
    out["format_not_first"] = (v, 1)

    v = list(base)
    v[first_node - 1] = v[first_node - 1].replace("e-01", "x-01", 1)
    out["non_numeric_coordinate"] = (v, first_node)

    v = list(base)
    v[first_node] = "1" + v[first_node][v[first_node].index(" "):]
    out["duplicate_node_id"] = (v, _line_of(v, "$EndNodes"))

    v = list(base)
    n = int(v[first_node - 2])
    v[first_node - 2] = str(n + 1)
    out["node_count_too_large"] = (v, _line_of(v, "$EndNodes"))

    v = list(base)
    v[_line_of(v, "$EndNodes") - 1] = "$EndNode"
    out["misspelled_end_nodes"] = (v, _line_of(base, "$EndNodes"))

    v = list(base)
    parts = v[first_elem - 1].split()
    v[first_elem - 1] = " ".join(parts[:-1])
    out["short_element"] = (v, first_elem)

    v = list(base)
    parts = v[first_elem].split()
    parts[-1] = "9999"
    v[first_elem] = " ".join(parts)
    out["undefined_node"] = (v, first_elem + 1)

    v = base[: first_elem + 2]
    out["truncated_elements"] = (v, len(v) + 1)

    return out


def main(outdir=None):
    outdir = Path(outdir or Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "corrupt")
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, (lines, lineno) in variants().items():
        (outdir / f"{name}.msh").write_text("\n".join(lines) + "\n")
        manifest[f"{name}.msh"] = lineno
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(manifest)} variants to {outdir}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
