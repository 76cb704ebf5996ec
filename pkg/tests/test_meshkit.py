import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdfem.meshkit import (
    FiberSpec,
    MeshError,
    MshParseError,
    UnstructuredMesh,
    build_structured_grid,
    format_msh,
    gen_disk_mesh,
    gen_fiber_mesh,
    gen_square_mesh,
    parse_msh,
    read_msh,
    two_fiber_specs,
    write_msh,
)
from pdfem.meshkit.generators import catmull_rom
from pdfem.meshkit.mesh import grid_as_mesh, merge_meshes

from .conftest import FIXTURES

# --------------------------------------------------------------------------
# structured grid


def test_grid_counts():
    g = build_structured_grid(2, 3, (0, 0), (1, 1))
    assert (g.n_nodes, g.n_cells) == (16, 9)
    assert g.characteristic_length == pytest.approx(1 / 3)
    g1 = build_structured_grid(2, 1)
    assert (g1.n_nodes, g1.n_cells) == (4, 1)
    g3 = build_structured_grid(3, 15)
    assert (g3.n_nodes, g3.n_cells) == (4096, 3375)


def test_grid_numbering_documented_rule():
    g = build_structured_grid(2, 3)
    # cell (1, 1) of the 3x3 grid: corners 5, 6, 10, 9 counter-clockwise
    assert g.cell_nodes[g.cell_index([1, 1])].tolist() == [5, 6, 10, 9]
    np.testing.assert_allclose(g.node_coords()[6], [2 / 3, 1 / 3])
    g3 = build_structured_grid(3, (2, 3, 4))
    i, j, k = 1, 2, 3
    assert g3.node_index([i, j, k]) == i + 3 * (j + 4 * k)
    assert g3.cell_index([1, 2, 3]) == 1 + 2 * (2 + 3 * 3)


@given(st.integers(2, 3), st.lists(st.integers(1, 6), min_size=3, max_size=3))
def test_grid_index_bijection(dim, res):
    g = build_structured_grid(dim, res[:dim])
    nodes = np.arange(g.n_nodes)
    cells = np.arange(g.n_cells)
    assert np.array_equal(g.node_index(g.node_ijk(nodes)), nodes)
    assert np.array_equal(g.cell_index(g.cell_ijk(cells)), cells)


@pytest.mark.parametrize("args", [(2, 0), (2, -1), (2, 2.5), (4, 3), (2, 3, None, (1, 0)), (2, 3, None, (1, -2))])
def test_grid_validation(args):
    with pytest.raises(ValueError):
        build_structured_grid(*args)


def test_grid_origin_and_lengths():
    g = build_structured_grid(2, (4, 2), origin=(-1, 2), side_lengths=(2, 1))
    np.testing.assert_allclose(g.h, [0.5, 0.5])
    np.testing.assert_allclose(g.node_coords()[-1], [1, 3])
    assert g.measure == pytest.approx(2.0)


def test_periodic_node_map_masters():
    g = build_structured_grid(3, 4)
    m = g.periodic_node_map()
    assert m.max() + 1 == 64
    corners = [g.node_index(c) for c in np.array(np.meshgrid([0, 4], [0, 4], [0, 4])).reshape(3, -1).T]
    assert len({int(m[c]) for c in corners}) == 1


def test_side_facets_and_boundary():
    g = build_structured_grid(2, 3)
    assert g.side_facets("xmax").tolist() == [[3, 7], [7, 11], [11, 15]]
    assert len(g.boundary_nodes()) == 12
    with pytest.raises(ValueError):
        g.side_nodes("zmin")


# --------------------------------------------------------------------------
# MSH parser


MINIMAL = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
3
1 0 0 0
2 1 0 0
3 0 1 0
$EndNodes
$Elements
1
1 2 2 7 1 1 2 3
$EndElements
"""


def test_minimal_file():
    m = parse_msh(MINIMAL)
    assert m.n_elements == 1 and m.blocks[0].type == "tri3"
    assert m.blocks[0].tags.tolist() == [7]
    assert m.dim == 2


def test_line_elements_skipped():
    text = MINIMAL.replace("1\n1 2 2 7 1 1 2 3", "3\n1 1 2 1 1 1 2\n2 15 2 1 1 3\n3 2 2 7 1 1 2 3")
    m = parse_msh(text)
    assert m.n_elements == 1
    m.validate()


def test_unknown_sections_skipped():
    text = MINIMAL.replace("$EndMeshFormat\n", "$EndMeshFormat\n$PhysicalNames\n1\n2 7 \"inc\"\n$EndPhysicalNames\n")
    assert parse_msh(text).n_elements == 1


def test_msh4_rejected_with_line():
    with pytest.raises(MshParseError) as exc:
        parse_msh(MINIMAL.replace("2.2 0 8", "4.1 0 8"), source="m.msh")
    assert exc.value.line == 2
    assert "m.msh:2" in str(exc.value)


def test_dangling_node_reference_has_line():
    with pytest.raises(MshParseError) as exc:
        parse_msh(MINIMAL.replace("1 2 3\n$EndElements", "1 2 9\n$EndElements"))
    assert exc.value.line == 12


def test_3d_parse_keeps_highest_dimension():
    m = gen_fiber_mesh(FiberSpec([[0, 0.5, 0.5], [1, 0.5, 0.5]], 0.1, 3, 6))
    text = format_msh(m)
    # append a surface triangle; it must be dropped
    lines = text.splitlines()
    k = lines.index("$Elements")
    lines[k + 1] = str(int(lines[k + 1]) + 1)
    lines.insert(lines.index("$EndElements"), f"{m.n_elements + 1} 2 2 1 1 1 2 3")
    parsed = parse_msh("\n".join(lines))
    assert parsed.dim == 3 and parsed.n_elements == m.n_elements


@pytest.mark.parametrize("name", ["disk_conformal_L0.msh", "disk_conformal_L1.msh", "disk_conformal_L2.msh"])
def test_fixture_round_trip_bit_stable(name):
    path = FIXTURES / name
    text = path.read_text()
    m = read_msh(path)
    again = format_msh(m)
    assert again == text
    m2 = parse_msh(io.StringIO(again))
    assert np.array_equal(m.nodes, m2.nodes)
    for a, b in zip(m.blocks, m2.blocks):
        assert np.array_equal(a.connectivity, b.connectivity) and np.array_equal(a.tags, b.tags)


def test_generated_disk_round_trip_counts(tmp_path):
    m = gen_disk_mesh((0.5, 0.5), 0.3, 1 / 120)
    write_msh(tmp_path / "d.msh", m)
    r = read_msh(tmp_path / "d.msh")
    assert (r.n_nodes, r.n_elements) == (m.n_nodes, m.n_elements)
    np.testing.assert_array_equal(r.nodes, m.nodes)


def test_corrupted_fixtures_report_lines():
    corrupt = FIXTURES / "corrupt"
    manifest = json.loads((corrupt / "manifest.json").read_text())
    assert len(manifest) == 10
    for name, line in manifest.items():
        with pytest.raises(MshParseError) as exc:
            read_msh(corrupt / name)
        assert exc.value.line == line, name
        assert f":{line}:" in str(exc.value)


# --------------------------------------------------------------------------
# generators


def test_disk_area_and_boundary():
    m = gen_disk_mesh((0.5, 0.5), 0.3, 0.05)
    assert abs(m.measure() - math.pi * 0.15**2) / (math.pi * 0.15**2) < 0.01
    assert m.characteristic_length() <= 0.05
    r = np.linalg.norm(m.nodes - 0.5, axis=1)
    assert r.max() <= 0.15 + 1e-14
    boundary = np.isclose(r, 0.15)
    assert boundary.sum() >= math.ceil(math.pi * 0.3 / 0.05)
    m.validate()


def test_disk_area_converges_quadratically():
    hs = [0.04, 0.02, 0.01]
    errs = [math.pi * 0.15**2 - gen_disk_mesh((0, 0), 0.3, h).measure() for h in hs]
    assert all(e > 0 for e in errs)
    rates = [math.log(errs[i] / errs[i + 1]) / math.log(2) for i in range(2)]
    assert all(1.6 < r < 2.4 for r in rates)


def test_disk_degenerate_refused():
    with pytest.raises(MeshError):
        gen_disk_mesh((0.5, 0.5), 0.3, 0.3)
    with pytest.raises(MeshError):
        gen_disk_mesh((0.5, 0.5), 0.0, 0.1)


@pytest.mark.parametrize("element", ["qua4", "tri3"])
def test_square_exact_area(element):
    m = gen_square_mesh((0.5, 0.5), 0.3, 0.1, element)
    assert m.measure() == pytest.approx(0.09, abs=1e-15)
    m.validate()


def test_square_matches_grid_nodes():
    m = gen_square_mesh((0.5, 0.5), 0.3, 0.05)
    g = build_structured_grid(2, 20)
    scaled = m.nodes * 20
    np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-12)
    assert set(g.node_index(np.round(scaled).astype(int)).tolist()) <= set(range(g.n_nodes))


def test_square_degenerate_refused():
    with pytest.raises(MeshError):
        gen_square_mesh((0.5, 0.5), 0.0, 0.1)


def test_straight_fiber_volume():
    m = gen_fiber_mesh(FiberSpec([[0, 0.5, 0.5], [1, 0.5, 0.5]], 0.1, 30, 32))
    assert abs(m.measure() - math.pi * 0.01) / (math.pi * 0.01) < 0.02
    m.validate()


def test_straight_centerline_equally_spaced():
    pos, tan = catmull_rom([[0, 0, 0], [1, 0.5, 0.25]], 31)
    steps = np.diff(pos, axis=0)
    np.testing.assert_allclose(steps, np.broadcast_to(steps[0], steps.shape), atol=1e-12)
    np.testing.assert_allclose(tan, np.broadcast_to(tan[0], tan.shape), atol=1e-12)


def test_axial_subdivisions_honored():
    spec = FiberSpec([[0, 0.5, 0.3], [0.5, 0.6, 0.3], [1, 0.5, 0.3]], 0.1, 30, 12)
    m = gen_fiber_mesh(spec)
    section = m.n_nodes // 31
    assert m.n_nodes == 31 * section


def test_fiber_validation():
    with pytest.raises(MeshError):
        FiberSpec([[0, 0, 0]], 0.1)
    with pytest.raises(MeshError):
        FiberSpec([[0, 0, 0], [1, 0, 0]], 0.0)
    with pytest.raises(MeshError):
        FiberSpec([[0, 0, 0], [1, 0, 0]], 0.1, circumferential_subdivisions=2)


def test_tight_bend_refused():
    pts = [[0, 0, 0], [0.1, 0, 0], [0.1, 0.02, 0], [0, 0.02, 0]]
    with pytest.raises(MeshError):
        gen_fiber_mesh(FiberSpec(pts, 0.1, 40, 12))


def test_two_fiber_cell():
    a, b = two_fiber_specs(axial_subdivisions=30, circumferential_subdivisions=12)
    assert a.periodic_wrap and b.periodic_wrap
    ma, mb = gen_fiber_mesh(a), gen_fiber_mesh(b)
    for m in (ma, mb):
        m.validate()
        assert m.periodic_wrap
    np.testing.assert_allclose(np.subtract(a.control_points[-1], a.control_points[0]), [1, 0, 0])
    np.testing.assert_allclose(np.subtract(b.control_points[-1], b.control_points[0]), [0, 1, 0])
    merged = merge_meshes([ma, mb])
    assert merged.n_nodes == ma.n_nodes + mb.n_nodes and merged.periodic_wrap


# --------------------------------------------------------------------------
# mesh container


def test_mesh_rejects_bad_connectivity():
    with pytest.raises(MeshError):
        UnstructuredMesh.single(np.zeros((3, 2)), "tri3", [[0, 1, 3]])


def test_validate_catches_inverted_element():
    m = UnstructuredMesh.single([[0, 0], [0, 1], [1, 0]], "tri3", [[0, 1, 2]])
    with pytest.raises(MeshError):
        m.validate()


def test_select_and_grid_as_mesh():
    g = build_structured_grid(2, 4)
    tags = np.where(np.arange(16) % 2, 2, 1)
    m = grid_as_mesh(g, tags)
    sub = m.select(2)
    assert sub.n_elements == 8
    assert sub.measure() == pytest.approx(0.5)
    assert m.characteristic_length() == pytest.approx(0.25)
