import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pdfem.meshkit import UnstructuredMesh, build_structured_grid, gen_disk_mesh, gen_fiber_mesh, gen_square_mesh
from pdfem.meshkit import two_fiber_specs
from pdfem.substitution import (
    LocationError,
    build_substitution,
    check_enveloping,
    locate,
    locate_points,
    pixelize,
)

from .oracles import cells_meeting_polygon

CORNER_TRIANGLE = [(0.05, 0.05), (0.6, 0.05), (0.05, 0.6)]


def triangle_mesh(vertices=CORNER_TRIANGLE):
    return UnstructuredMesh.single(np.array(vertices, float), "tri3", [[0, 1, 2]])


# --------------------------------------------------------------------------
# location


def test_locate_center_of_middle_cell():
    g = build_structured_grid(2, 3)
    cell, ref = locate(g, (0.5, 0.5))
    assert cell == (1, 1)
    np.testing.assert_allclose(ref, [0, 0], atol=1e-15)


def test_locate_floor_rule_on_interior_line():
    g = build_structured_grid(2, 3)
    cell, ref = locate(g, (1 / 3, 0.5))
    assert cell == (1, 1)
    assert ref[0] == -1.0


def test_locate_clamps_upper_boundary():
    g = build_structured_grid(2, 3)
    cell, ref = locate(g, (1.0, 1.0))
    assert cell == (2, 2)
    np.testing.assert_array_equal(ref, [1, 1])


def test_locate_periodic_wrap():
    g = build_structured_grid(2, 5)
    a = locate(g, (1.2, 0.5), periodic=True)
    b = locate(g, (0.2, 0.5))
    assert a[0] == b[0]
    np.testing.assert_allclose(a[1], b[1], atol=1e-12)
    # the max face is identified with the min face
    assert locate(g, (1.0, 0.5), periodic=True)[0][0] == 0


def test_out_of_bounds_rejected():
    g = build_structured_grid(2, 3)
    with pytest.raises(LocationError):
        locate(g, (1.2, 0.5))
    with pytest.raises(LocationError, match="outside"):
        build_substitution(g, np.array([[0.5, 0.5], [-0.1, 0.2]]))


@given(arrays(float, (50, 3), elements=st.floats(0, 1)), st.integers(1, 7))
def test_reference_coordinates_in_range(points, n):
    g = build_structured_grid(3, n)
    cells, ref = locate_points(g, points)
    assert np.all(np.abs(ref) <= 1 + 1e-9)
    centers = g.cell_centers()[cells]
    np.testing.assert_allclose(centers + ref * g.h / 2, points, atol=1e-12)


# --------------------------------------------------------------------------
# substitution matrix


def test_middle_cell_column_pattern():
    g = build_structured_grid(2, 3)
    S = build_substitution(g, np.array([[0.45, 0.55]]))
    assert sorted(S.matrix[0].indices.tolist()) == [5, 6, 9, 10]


def test_coincident_node_gives_unit_row():
    g = build_structured_grid(2, 4)
    node = 7
    S = build_substitution(g, g.node_coords()[[node]])
    row = S.matrix[0]
    assert row.indices.tolist() == [node] and row.data.tolist() == [1.0]


def test_cell_center_gives_quarter_weights():
    g = build_structured_grid(2, 4)
    S = build_substitution(g, np.array([[0.375, 0.625]]))
    np.testing.assert_allclose(S.matrix[0].data, [0.25] * 4)


def test_matching_square_is_selection():
    g = build_structured_grid(2, 20)
    m = gen_square_mesh((0.5, 0.5), 0.3, 0.05)
    S = build_substitution(g, m).matrix
    assert np.all(S.data == 1.0) and np.all(np.diff(S.indptr) == 1)


@st.composite
def points_on_grid(draw):
    dim = draw(st.integers(2, 3))
    n = draw(st.integers(1, 9))
    lengths = draw(arrays(float, dim, elements=st.floats(0.2, 3)))
    origin = draw(arrays(float, dim, elements=st.floats(-2, 2)))
    u = draw(arrays(float, (40, dim), elements=st.floats(0, 1)))
    return build_structured_grid(dim, n, origin, lengths), origin + u * lengths


@given(points_on_grid(), st.integers(1, 3))
def test_rows_stochastic_and_affine_reproduction(data, ncomp):
    g, pts = data
    S = build_substitution(g, pts, dofs_per_node=ncomp)
    scalar = S.scalar
    assert np.all(np.diff(scalar.indptr) <= 2**g.dim)
    assert np.all((scalar.data >= 0) & (scalar.data <= 1))
    np.testing.assert_allclose(np.asarray(scalar.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    X = g.node_coords()
    A = np.arange(1, g.dim * ncomp + 1).reshape(ncomp, g.dim) / 3.0
    b = np.linspace(-1, 1, ncomp)
    u = (X @ A.T + b).ravel()
    v = (S.matrix @ u).reshape(-1, ncomp)
    np.testing.assert_allclose(v, pts @ A.T + b, atol=1e-12 * max(1.0, np.abs(u).max()))


def test_elastic_block_structure():
    g = build_structured_grid(2, 5)
    pts = np.random.default_rng(1).uniform(0, 1, (20, 2))
    S1 = build_substitution(g, pts, 1).matrix.toarray()
    S2 = build_substitution(g, pts, 2).matrix.toarray()
    np.testing.assert_array_equal(S2[0::2, 0::2], S1)
    np.testing.assert_array_equal(S2[1::2, 1::2], S1)
    assert not S2[0::2, 1::2].any()


def test_ten_thousand_random_points_across_fixtures():
    rng = np.random.default_rng(2024)
    fixtures = [build_structured_grid(2, 60), build_structured_grid(2, (7, 13), (-1, 0.5), (2, 3)),
                build_structured_grid(3, 15), build_structured_grid(3, 4, None, (0.5, 1, 2))]
    for g in fixtures:
        pts = np.asarray(g.origin) + rng.uniform(0, 1, (2500, g.dim)) * np.asarray(g.lengths)
        S = build_substitution(g, pts).scalar
        np.testing.assert_allclose(np.asarray(S.sum(axis=1)).ravel(), 1.0, atol=1e-12)
        assert S.data.min() >= 0 and S.data.max() <= 1
        X = g.node_coords()
        a = np.arange(1, g.dim + 1)
        np.testing.assert_allclose(S @ (X @ a + 0.5), pts @ a + 0.5, atol=1e-12)


def test_periodic_columns_refer_to_masters():
    g = build_structured_grid(3, 4)
    mesh = gen_fiber_mesh(two_fiber_specs(axial_subdivisions=20, circumferential_subdivisions=8)[0])
    S = build_substitution(g, mesh, 3, periodic=True)
    assert S.matrix.shape == (3 * mesh.n_nodes, 3 * g.n_cells)
    np.testing.assert_allclose(np.asarray(S.scalar.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_deterministic():
    g = build_structured_grid(2, 17)
    m = gen_disk_mesh((0.5, 0.5), 0.3, 0.02)
    a, b = build_substitution(g, m).matrix, build_substitution(g, m).matrix
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.data, b.data)


# --------------------------------------------------------------------------
# pixelization


def test_coarse_grid_envelops_triangle():
    g = build_structured_grid(2, 3)
    mesh = triangle_mesh()
    pixels = set(pixelize(g, mesh).tolist())
    assert cells_meeting_polygon(3, CORNER_TRIANGLE) <= pixels
    rep = check_enveloping(g, mesh)
    assert rep.enveloping and rep.gap_cells == []


def test_fine_grid_leaves_gaps():
    g = build_structured_grid(2, 6)
    mesh = triangle_mesh()
    truth = cells_meeting_polygon(6, CORNER_TRIANGLE)
    pixels = set(pixelize(g, mesh).tolist())
    assert truth - pixels
    rep = check_enveloping(g, mesh)
    assert not rep.enveloping
    assert set(rep.gap_cells) <= truth - pixels


def test_empty_mesh_pixelization():
    g = build_structured_grid(2, 3)
    empty = UnstructuredMesh(np.zeros((0, 2)))
    assert pixelize(g, empty).size == 0


def test_eta_ratio():
    g = build_structured_grid(2, 60)
    mesh = gen_square_mesh((0.5, 0.5), 0.3, 1 / 120)
    rep = check_enveloping(g, mesh)
    assert rep.eta == pytest.approx(2.0)
    assert rep.warnings == []


def test_eta_below_one_warns():
    g = build_structured_grid(2, 20)
    rep = check_enveloping(g, gen_disk_mesh((0.5, 0.5), 0.3, 0.1))
    assert rep.eta < 1 and rep.warnings


def test_fine_mesh_on_convex_inclusion_envelops():
    n = 10
    g = build_structured_grid(2, n)
    mesh = gen_disk_mesh((0.53, 0.47), 0.42, 0.5 / n)
    boundary = mesh.nodes[np.isclose(np.linalg.norm(mesh.nodes - (0.53, 0.47), axis=1), 0.21)]
    order = np.argsort(np.arctan2(boundary[:, 1] - 0.47, boundary[:, 0] - 0.53))
    truth = cells_meeting_polygon(n, boundary[order])
    pixels = set(pixelize(g, mesh).tolist())
    assert truth <= pixels
    rep = check_enveloping(g, mesh)
    assert rep.enveloping and rep.eta >= 2 - 1e-12


@given(st.floats(0.02, 0.45), st.floats(0.02, 0.45), st.floats(0.02, 0.45), st.floats(0.02, 0.45),
       st.integers(2, 8))
def test_reported_gaps_are_real(x0, y0, dx, dy, n):
    tri = [(x0, y0), (x0 + dx, y0), (x0, y0 + dy)]
    rep = check_enveloping(build_structured_grid(2, n), triangle_mesh(tri))
    truth = cells_meeting_polygon(n, tri)
    assert set(rep.gap_cells) <= truth
    assert rep.enveloping == (not rep.gap_cells)


def test_report_serialization_and_mask():
    g = build_structured_grid(2, 6)
    rep = check_enveloping(g, triangle_mesh())
    d = rep.to_dict()
    assert set(d) == {"covered_cells", "eta", "enveloping", "gap_cells", "h_mat", "h_inc", "warnings"}
    mask = rep.mask(g)
    assert (mask == 1).sum() == len(rep.covered_cells) and (mask == 2).sum() == len(rep.gap_cells)
    with pytest.raises(ValueError):
        check_enveloping(g, triangle_mesh(), samples_per_element=0)
