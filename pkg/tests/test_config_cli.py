import copy
import json

import jsonschema
import numpy as np
import pytest
from click.testing import CliRunner

from pdfem.cli import main
from pdfem.config import ConfigError, build_inclusions, load_config, parse_config
from pdfem.schemas import json_schema

from .conftest import FIXTURES

BASE = {
    "physics": "thermal",
    "dimension": 2,
    "grid": {"resolution": 12},
    "materials": {"matrix": {"conductivity": 1.0}, "contrast": 10.0},
    "inclusions": [{"shape": "disk", "center": [0.5, 0.5], "diameter": 0.3, "target_h": 0.04}],
    "bc": {"kind": "kubc", "macro": [1.0, 0.0]},
    "outputs": {"prefix": "run"},
}


def cfg(**changes):
    data = copy.deepcopy(BASE)
    for key, value in changes.items():
        node = data
        *path, last = key.split("__")
        for p in path:
            node = node.setdefault(p, {})
        if value is None:
            node.pop(last, None)
        else:
            node[last] = value
    return data


@pytest.fixture
def run(tmp_path):
    runner = CliRunner()

    def invoke(args, config=None):
        if config is not None:
            path = tmp_path / "case.json"
            path.write_text(json.dumps(config))
            args = [a if a != "CONFIG" else str(path) for a in args]
        return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)

    return invoke


def validated(path, name):
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, json_schema(name))
    return doc


# --------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize("changes,pointer", [
    ({"grid__resolution": 0}, "/grid/resolution"),
    ({"materials__matrix__conductivity": -1.0}, "/materials/matrix/conductivity"),
    ({"materials__inclusion": {"conductivity": 2.0}}, "/materials"),
    ({"bc__macro": [1.0, 0.0, 0.0]}, "/bc/macro"),
    ({"inclusions": [{"shape": "disk", "center": [0.5, 0.5], "diameter": -1, "target_h": 0.1}]},
     "/inclusions/0/diameter"),
    ({"physics": "magnetic"}, "/physics"),
    ({"bc__dirichlet": {"xmin": 0.0}}, "/bc"),
    ({"solver__preconditioner": "ilu"}, "/solver/preconditioner"),
    ({"grid__origin": [0.0]}, "/grid/origin"),
])
def test_config_errors_carry_pointer(changes, pointer):
    with pytest.raises(ConfigError) as exc:
        parse_config(cfg(**changes))
    assert exc.value.pointer == pointer


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="/grid/spacing"):
        parse_config(cfg(grid__spacing=0.1))


def test_missing_mesh_file_reports_path(tmp_path):
    c = parse_config(cfg(inclusions=[{"shape": "mesh", "path": "nowhere.msh"}]), tmp_path)
    with pytest.raises(ConfigError, match="nowhere.msh") as exc:
        build_inclusions(c)
    assert exc.value.pointer == "/inclusions/0/path"


def test_mesh_inclusion_relative_to_config(tmp_path):
    (tmp_path / "m.msh").write_text((FIXTURES / "disk_conformal_L0.msh").read_text())
    (tmp_path / "c.json").write_text(json.dumps(cfg(inclusions=[{"shape": "mesh", "path": "m.msh"}])))
    meshes = build_inclusions(load_config(tmp_path / "c.json"))
    assert meshes[0].measure() == pytest.approx(np.pi * 0.15**2, rel=1e-2)


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n "physics": "thermal",\n oops\n}')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)


# --------------------------------------------------------------------------
# solve


def test_solve_writes_vtk_and_json(run, tmp_path):
    res = run(["solve", "CONFIG", "--out", tmp_path / "o"], cfg())
    assert res.exit_code == 0, res.output
    out = tmp_path / "o"
    grid_vtk = (out / "run_grid.vtk").read_text().splitlines()
    assert grid_vtk[0].startswith("# vtk DataFile") and grid_vtk[3] == "DATASET STRUCTURED_POINTS"
    assert "DATASET UNSTRUCTURED_GRID" in (out / "run_inclusion.vtk").read_text()
    doc = validated(out / "run_solve.json", "solve")
    assert doc["dofs"]["grid_nodes"] == 169 and doc["report"]["residual"] <= 1e-10


def test_solve_unit_contrast_is_affine(run, tmp_path):
    res = run(["solve", "CONFIG", "--out", tmp_path], cfg(materials__contrast=1.0, bc__macro=[0.5, 2.0]))
    assert res.exit_code == 0
    lines = (tmp_path / "run_grid.vtk").read_text().split("LOOKUP_TABLE default\n")[1].split()
    u = np.array(lines[:169], float)
    x = np.stack(np.meshgrid(np.linspace(0, 1, 13), np.linspace(0, 1, 13)), -1).reshape(-1, 2)
    np.testing.assert_allclose(u, x @ [0.5, 2.0], atol=1e-9)


def test_solve_mixed(run, tmp_path):
    c = cfg(bc={"kind": "mixed", "dirichlet": {"xmin": 0.0, "xmax": 1.0}})
    res = run(["solve", "CONFIG", "--out", tmp_path], c)
    assert res.exit_code == 0
    assert validated(tmp_path / "run_solve.json", "solve")["bc_kind"] == "mixed"


def test_numeric_failure_exit_1(run, tmp_path):
    res = run(["solve", "CONFIG", "--out", tmp_path], cfg(solver={"max_iter": 1, "preconditioner": "none"}))
    assert res.exit_code == 1
    assert "error:" in res.stderr


def test_input_errors_exit_2(run, tmp_path):
    assert run(["solve", tmp_path / "missing.json"]).exit_code == 2
    res = run(["solve", "CONFIG"], cfg(inclusions=[{"shape": "mesh", "path": "missing.msh"}]))
    assert res.exit_code == 2 and "missing.msh" in res.stderr
    res = run(["solve", "CONFIG"], cfg(bc__macro=None))
    assert res.exit_code == 2 and "/bc/macro" in res.stderr


def test_dump_effective_config(run):
    res = run(["solve", "CONFIG", "--dump-effective-config"], cfg())
    assert res.exit_code == 0
    doc = json.loads(res.stdout)
    assert doc["solver"] == {"tol": 1e-10, "max_iter": None, "preconditioner": "ic0"}
    assert doc["outputs"]["json"] is True


def test_solve_deterministic(run, tmp_path):
    for d in ("a", "b"):
        assert run(["solve", "CONFIG", "--out", tmp_path / d], cfg()).exit_code == 0
    assert (tmp_path / "a/run_grid.vtk").read_bytes() == (tmp_path / "b/run_grid.vtk").read_bytes()


def test_threads_option(run, tmp_path, monkeypatch):
    assert run(["--threads", 1, "solve", "CONFIG", "--out", tmp_path], cfg()).exit_code == 0
    monkeypatch.setenv("PDFEM_THREADS", "2")
    assert run(["solve", "CONFIG", "--out", tmp_path], cfg()).exit_code == 0
    assert run(["--threads", 0, "solve", "CONFIG"], cfg()).exit_code == 2


# --------------------------------------------------------------------------
# homogenize, compare, converge, pixelization


def test_homogenize_outputs(run, tmp_path):
    res = run(["homogenize", "CONFIG", "--out", tmp_path], cfg(bc={"kind": "subc"}))
    assert res.exit_code == 0
    doc = validated(tmp_path / "run_effective.json", "effective")
    assert doc["bounds"]["within"] and doc["symmetric"]
    A = np.array(doc["matrix"])
    csv_rows = (tmp_path / "run_effective.csv").read_text().splitlines()
    assert csv_rows[0] == "row,c0,c1" and float(csv_rows[1].split(",")[1]) == A[0, 0]


def test_homogenize_periodic_reports_reduced_dofs(run, tmp_path):
    res = run(["homogenize", "CONFIG", "--out", tmp_path], cfg(bc={"kind": "periodic"}))
    assert res.exit_code == 0
    assert validated(tmp_path / "run_effective.json", "effective")["dofs"]["reduced_dofs"] == 144


def test_compare_grid_reference(run, tmp_path):
    c = cfg(inclusions=[{"shape": "square", "center": [0.5, 0.5], "side": 0.5, "target_h": 1 / 12}],
            grid__resolution=12)
    res = run(["compare", "CONFIG", "--conformal", "grid", "--out", tmp_path], c)
    assert res.exit_code == 0, res.output
    doc = validated(tmp_path / "run_compare.json", "difference")
    assert doc["euclidean"] < 1e-8
    assert "difference" in (tmp_path / "run_difference.vtk").read_text()


def test_compare_against_msh(run, tmp_path):
    res = run(["compare", "CONFIG", "--conformal", FIXTURES / "disk_conformal_L0.msh", "--out", tmp_path],
              cfg(grid__resolution=20, inclusions=[{"shape": "mesh", "path": str(FIXTURES / "disk_conformal_L0.msh")}]))
    assert res.exit_code == 0
    doc = validated(tmp_path / "run_compare.json", "difference")
    assert 0 < doc["l2"] < 0.05


def test_converge_synthetic(run, tmp_path):
    res = run(["converge", "--synthetic", "--resolutions", "20,30,40,60", "--out", tmp_path])
    assert res.exit_code == 0
    doc = validated(tmp_path / "synthetic_convergence.json", "convergence")
    assert doc["slopes"]["l2"] == pytest.approx(1.0)
    assert "slope" in (tmp_path / "synthetic_convergence.csv").read_text()
    assert run(["converge", "--synthetic", "--resolutions", "20,30"]).exit_code == 2


def test_converge_coefficients(run, tmp_path):
    res = run(["converge", "CONFIG", "--mode", "coefficients", "--resolutions", "8,12,24", "--out", tmp_path],
              cfg(bc={"kind": "kubc"}))
    assert res.exit_code == 0, res.output
    doc = validated(tmp_path / "run_convergence.json", "convergence")
    assert [r["n"] for r in doc["rows"]] == [8, 12]


def test_check_pixelization(run, tmp_path):
    tri = {"shape": "triangle", "vertices": [[0.05, 0.05], [0.6, 0.05], [0.05, 0.6]]}
    res = run(["check-pixelization", "CONFIG", "--out", tmp_path], cfg(grid__resolution=6, inclusions=[tri]))
    assert res.exit_code == 0
    assert "enveloping = false" in res.stdout
    doc = validated(tmp_path / "run_pixelization.json", "pixelization")
    assert doc["gap_cells"]
    assert "CELL_DATA 36" in (tmp_path / "run_pixels.vtk").read_text()


@pytest.mark.parametrize("name", ["solve", "effective", "difference", "convergence", "pixelization"])
def test_schema_command(run, name):
    res = run(["schema", name])
    assert res.exit_code == 0
    jsonschema.Draft202012Validator.check_schema(json.loads(res.stdout))


# --------------------------------------------------------------------------
# mesh utilities


def test_mesh_generate_and_check(run, tmp_path):
    out = tmp_path / "disk.msh"
    assert run(["mesh", "gen-disk", "--diameter", 0.3, "--target-h", 0.05, "-o", out]).exit_code == 0
    res = run(["mesh", "check", out])
    assert res.exit_code == 0 and "tri3" in res.stdout
    assert run(["mesh", "gen-square", "--side", 0.4, "--target-h", 0.1, "-o", tmp_path / "s.msh"]).exit_code == 0
    res = run(["mesh", "gen-fiber", "--control-points", "0.5,0.5,0.1;0.5,0.5,0.9", "--radius", 0.1,
               "--axial", 4, "--circumferential", 8, "-o", tmp_path / "f.msh"])
    assert res.exit_code == 0 and "tet4" in run(["mesh", "check", tmp_path / "f.msh"]).stdout


def test_mesh_check_corrupted(run):
    manifest = json.loads((FIXTURES / "corrupt" / "manifest.json").read_text())
    for name, line in manifest.items():
        path = FIXTURES / "corrupt" / name
        res = run(["mesh", "check", path])
        assert res.exit_code == 2, name
        assert f"{path}:{line}:" in res.stderr, (name, res.stderr)
    assert run(["mesh", "check", "absent.msh"]).exit_code == 2


def test_version(run):
    res = run(["--version"])
    assert res.exit_code == 0 and "pdfem" in res.stdout
