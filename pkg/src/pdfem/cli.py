"""``pdfem`` command-line interface.

Exit codes: 0 success, 1 numerical failure (non-convergence, unbalanced
load), 2 input or configuration error.
"""

from __future__ import annotations

import functools
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import compare as cmp
from . import homogenize as hom
from . import io as pio
from . import solver as sv
from .config import (
    ConfigError,
    build_grid,
    build_inclusions,
    build_materials,
    effective_config,
    load_config,
    macro_of,
    resolve_path,
)
from .meshkit import (
    FiberSpec,
    MeshError,
    gen_disk_mesh,
    gen_fiber_mesh,
    gen_square_mesh,
    merge_meshes,
    read_msh,
    two_fiber_specs,
    write_msh,
)
from .schemas import SCHEMAS, json_schema
from .substitution import LocationError, check_enveloping

THREADS_ENV = "PDFEM_THREADS"
EXIT_NUMERIC = 1
EXIT_INPUT = 2

log = logging.getLogger("pdfem")


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handled(fn):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (sv.ConvergenceError, sv.EquilibriumError, sv.SolverError) as exc:
            _fail(EXIT_NUMERIC, str(exc))
        except (ConfigError, MeshError, LocationError, FileNotFoundError, cmp.DifferenceError) as exc:
            _fail(EXIT_INPUT, str(exc))
        except ValueError as exc:
            _fail(EXIT_INPUT, str(exc))

    return wrapper


def _set_threads(n: int | None):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env and env.isdigit() else None
    if n is None:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):
        pass


@click.group()
@click.version_option(__version__, prog_name="pdfem")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help=f"Cap on worker threads (default: ${THREADS_ENV} or all cores).")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(threads, verbose):
    """Phantom-domain finite elements: fields, effective tensors and FEM comparisons."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    _set_threads(threads)


# --------------------------------------------------------------------------
# shared plumbing


def _load(config_path, dump: bool):
    cfg = load_config(config_path)
    if dump:
        click.echo(json.dumps(effective_config(cfg), indent=2))
        sys.exit(0)
    return cfg


def _outdir(cfg, override):
    d = Path(override) if override else resolve_path(cfg, cfg.outputs.directory)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _problem(cfg, periodic=None):
    t0 = time.perf_counter()
    grid = build_grid(cfg)
    matrix, inclusion = build_materials(cfg)
    meshes = build_inclusions(cfg)
    t_mesh = time.perf_counter() - t0
    periodic = cfg.bc.kind == "periodic" if periodic is None else periodic
    opts = cfg.solver.model_dump()
    problem = hom.PhantomProblem(grid, matrix, inclusion, meshes, periodic=periodic, model=cfg.model,
                                 solver_options=opts)
    problem.timings["mesh"] = t_mesh
    return problem


def _dofs(problem) -> dict:
    g = problem.grid
    out = {
        "grid_nodes": g.n_nodes,
        "system_dofs": int(problem.K.shape[0]),
        "full_dofs": problem.ncomp * g.n_nodes,
    }
    if problem.periodic:
        out["reduced_dofs"] = problem.dofmap.n_dofs
    return out


def _eta(problem):
    if problem.mesh is None:
        return None
    return check_enveloping(problem.grid, problem.mesh).eta


def _emit(path: Path, doc: dict, schema: str):
    SCHEMAS[schema].model_validate(doc)
    pio.write_json(path, doc)
    return str(path)


# --------------------------------------------------------------------------
# commands


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory override.")
@click.option("--dump-effective-config", is_flag=True, help="Print the resolved config and exit.")
@handled
def solve(config, out_dir, dump_effective_config):
    """Solve one boundary-value problem and write VTK fields plus a JSON report."""
    cfg = _load(config, dump_effective_config)
    problem = _problem(cfg)
    kind = cfg.bc.kind
    if kind == "mixed":
        sol = hom.solve_mixed(problem, cfg.bc.dirichlet, cfg.bc.neumann, cfg.bc.source)
    else:
        macro = macro_of(cfg)
        if macro is None:
            raise ConfigError("/bc/macro", f"'solve' needs a macro load for bc kind {kind!r}")
        sol = hom.SOLVERS[kind](problem, hom.LoadCase(kind, macro, kind))
    outdir = _outdir(cfg, out_dir)
    prefix = cfg.outputs.prefix
    written = []
    t0 = time.perf_counter()
    if cfg.outputs.vtk:
        u = pio.nodal_field(sol.u, problem.ncomp)
        written.append(str(pio.write_vtk_grid(outdir / f"{prefix}_grid.vtk", problem.grid, {"u": u})))
        if problem.mesh is not None:
            v = pio.nodal_field(sol.v, problem.ncomp)
            written.append(str(pio.write_vtk_mesh(outdir / f"{prefix}_inclusion.vtk", problem.mesh, {"u": v})))
    problem.timings["post"] = problem.timings.get("post", 0.0) + time.perf_counter() - t0
    doc = {
        "command": "solve",
        "bc_kind": kind,
        "report": sol.report.to_dict(),
        "dofs": _dofs(problem),
        "eta": _eta(problem),
        "timings": dict(problem.timings),
        "outputs": written,
    }
    if cfg.outputs.json_:
        written.append(_emit(outdir / f"{prefix}_solve.json", doc, "solve"))
        doc["outputs"] = written
    click.echo(json.dumps(doc, indent=2))


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--dump-effective-config", is_flag=True, help="Print the resolved config and exit.")
@handled
def homogenize(config, out_dir, dump_effective_config):
    """Run the unit load battery of the configured bc kind and report the effective tensor."""
    cfg = _load(config, dump_effective_config)
    if cfg.bc.kind == "mixed":
        raise ConfigError("/bc/kind", "homogenize needs kubc, subc or periodic")
    problem = _problem(cfg)
    eff, _ = hom.run_battery(problem, cfg.bc.kind)
    doc = eff.to_dict()
    doc["dofs"] = _dofs(problem)
    doc["timings"] = dict(problem.timings)
    outdir = _outdir(cfg, out_dir)
    prefix = cfg.outputs.prefix
    written = []
    if cfg.outputs.csv:
        p = outdir / f"{prefix}_effective.csv"
        p.write_text(eff.to_csv())
        written.append(str(p))
    if cfg.outputs.json_:
        p = outdir / f"{prefix}_effective.json"
        written.append(str(p))
        doc["outputs"] = written
        _emit(p, doc, "effective")
    doc["outputs"] = written
    click.echo(json.dumps(doc, indent=2))


def _fixture(cfg, conformal_path, case_index=0):
    if cfg.bc.kind not in ("kubc", "subc"):
        raise ConfigError("/bc/kind", "comparisons support kubc and subc")
    matrix, inclusion = build_materials(cfg)
    macro = macro_of(cfg)
    case = (hom.LoadCase(cfg.bc.kind, macro, cfg.bc.kind) if macro is not None
            else hom.unit_cases(cfg.bc.kind, cfg.dimension, cfg.physics)[case_index])
    opts = cfg.solver.model_dump()
    inc_meshes = build_inclusions(cfg)
    inc_mesh = merge_meshes(inc_meshes) if inc_meshes else None
    grid = build_grid(cfg)
    if conformal_path == "grid":
        if inc_mesh is None:
            raise ConfigError("/inclusions", "'--conformal grid' needs inclusions in the config")
        conf = cmp.conformal_from_grid(grid, inc_mesh, matrix, inclusion, model=cfg.model, solver_options=opts)
    else:
        path = Path(conformal_path)
        if not path.is_file():
            raise ConfigError("/", f"conformal mesh not found: {path}")
        conf = cmp.ConformalProblem.two_phase(read_msh(path), matrix, inclusion, model=cfg.model, solver_options=opts)
    return cmp.ComparisonFixture(conf, case, inc_mesh, grid.origin, grid.lengths), grid


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--conformal", "conformal_path", required=True,
              help="Tagged conformal MSH mesh, or 'grid' for the structured grid with per-cell materials.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--dump-effective-config", is_flag=True)
@handled
def compare(config, conformal_path, out_dir, dump_effective_config):
    """Relative difference between the phantom-domain and conformal FEM solutions."""
    cfg = _load(config, dump_effective_config)
    fixture, grid = _fixture(cfg, conformal_path)
    p, u_ref, u_proj = fixture.fields(grid.resolution[0])
    rep = fixture.report(p, u_ref, u_proj)
    doc = rep.to_dict()
    outdir = _outdir(cfg, out_dir)
    if cfg.outputs.vtk:
        nc = fixture.conformal.ncomp
        pio.write_vtk_mesh(outdir / f"{cfg.outputs.prefix}_difference.vtk", fixture.conformal.mesh, {
            "u_fem": pio.nodal_field(u_ref, nc),
            "u_pdfem": pio.nodal_field(u_proj, nc),
            "difference": pio.nodal_field(u_ref - u_proj, nc),
        })
    if cfg.outputs.json_:
        _emit(outdir / f"{cfg.outputs.prefix}_compare.json", doc, "difference")
    click.echo(json.dumps(doc, indent=2))


@main.command()
@click.argument("config", type=click.Path(dir_okay=False), required=False)
@click.option("--resolutions", required=True, help="Comma-separated grid resolutions, e.g. 20,30,40,60.")
@click.option("--conformal", "conformal_path", default=None, help="Conformal reference mesh (field mode).")
@click.option("--mode", type=click.Choice(["field", "coefficients"]), default="field")
@click.option("--reference", "reference_n", type=int, default=None,
              help="Reference resolution for coefficient mode (default: the largest).")
@click.option("--synthetic", is_flag=True, help="Use the exact C*h synthetic fixture (no config needed).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@handled
def converge(config, resolutions, conformal_path, mode, reference_n, synthetic, out_dir):
    """Convergence table (CSV) with fitted log-log slopes."""
    try:
        ns = sorted({int(s) for s in resolutions.split(",") if s.strip()})
    except ValueError:
        raise ConfigError("/", f"bad --resolutions {resolutions!r}") from None
    if synthetic:
        table = cmp.convergence_study(cmp.SyntheticFixture(), ns)
        prefix, outdir = "synthetic", Path(out_dir or ".")
        outdir.mkdir(parents=True, exist_ok=True)
    else:
        if config is None:
            raise ConfigError("/", "a config file is required unless --synthetic is given")
        cfg = load_config(config)
        outdir, prefix = _outdir(cfg, out_dir), cfg.outputs.prefix
        if mode == "field":
            if conformal_path is None:
                raise ConfigError("/", "field mode needs --conformal")
            fixture, _ = _fixture(cfg, conformal_path)
            table = cmp.convergence_study(fixture, ns)
        else:
            if cfg.bc.kind == "mixed":
                raise ConfigError("/bc/kind", "coefficient mode needs kubc, subc or periodic")
            ref = reference_n or ns[-1]
            tensors = {}
            for n in sorted(set(ns) | {ref}):
                data = cfg.model_dump(by_alias=True)
                data["grid"]["resolution"] = n
                sub = type(cfg).model_validate(data)
                sub._base_dir = cfg._base_dir
                tensors[n] = hom.run_battery(_problem(sub), cfg.bc.kind)[0].matrix
            table = cmp.coefficient_convergence({n: tensors[n] for n in ns if n != ref}, tensors[ref])
            if not table.strictly_decreasing("frobenius"):
                table.warnings.append("coefficient differences are not monotonically decreasing")
    for w in table.warnings:
        click.echo(f"warning: {w}", err=True)
    (outdir / f"{prefix}_convergence.csv").write_text(table.to_csv())
    _emit(outdir / f"{prefix}_convergence.json", table.to_dict(), "convergence")
    click.echo(table.to_csv(), nl=False)


@main.command("check-pixelization")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--samples", type=click.IntRange(min=1), default=10, help="Sample points per inclusion element.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@handled
def check_pixelization(config, samples, out_dir):
    """Pixel set, gaps and eta of the configured inclusions, plus a VTK cell mask."""
    cfg = load_config(config)
    grid = build_grid(cfg)
    meshes = build_inclusions(cfg)
    if not meshes:
        raise ConfigError("/inclusions", "no inclusions to check")
    mesh = merge_meshes(meshes)
    rep = check_enveloping(grid, mesh, samples, periodic=cfg.bc.kind == "periodic")
    outdir = _outdir(cfg, out_dir)
    prefix = cfg.outputs.prefix
    if cfg.outputs.vtk:
        pio.write_vtk_grid(outdir / f"{prefix}_pixels.vtk", grid, cell_data={"pixel": rep.mask(grid)})
    doc = rep.to_dict()
    if cfg.outputs.json_:
        _emit(outdir / f"{prefix}_pixelization.json", doc, "pixelization")
    click.echo(f"eta = {rep.eta:.6g}  enveloping = {str(rep.enveloping).lower()}  "
               f"pixels = {len(rep.covered_cells)}  gaps = {len(rep.gap_cells)}")


@main.command()
@click.argument("name", type=click.Choice(sorted(SCHEMAS)))
def schema(name):
    """Print the JSON schema of an emitted document."""
    click.echo(json.dumps(json_schema(name), indent=2))


# --------------------------------------------------------------------------
# mesh utilities


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise click.BadParameter(f"expected {n} numbers, got {len(vals)}")
    return vals


def _report_mesh(mesh, path):
    click.echo(f"{path}: {mesh.n_nodes} nodes, {mesh.n_elements} elements, "
               f"h = {mesh.characteristic_length():.6g}, measure = {mesh.measure():.6g}")


@main.group()
def mesh():
    """Generate or check inclusion meshes (MSH 2.2 ASCII)."""


@mesh.command("gen-disk")
@click.option("--center", default="0.5,0.5", show_default=True)
@click.option("--diameter", type=float, required=True)
@click.option("--target-h", type=float, required=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@handled
def gen_disk(center, diameter, target_h, output):
    m = gen_disk_mesh(_floats(center, 2), diameter, target_h)
    write_msh(output, m)
    _report_mesh(m, output)


@mesh.command("gen-square")
@click.option("--center", default="0.5,0.5", show_default=True)
@click.option("--side", type=float, required=True)
@click.option("--target-h", type=float, required=True)
@click.option("--element", type=click.Choice(["qua4", "tri3"]), default="qua4", show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@handled
def gen_square(center, side, target_h, element, output):
    m = gen_square_mesh(_floats(center, 2), side, target_h, element)
    write_msh(output, m)
    _report_mesh(m, output)


@mesh.command("gen-fiber")
@click.option("--control-points", default=None, help="Semicolon-separated x,y,z triples.")
@click.option("--radius", type=float, default=0.1, show_default=True)
@click.option("--axial", type=int, default=30, show_default=True, help="Axial subdivisions.")
@click.option("--circumferential", type=int, default=16, show_default=True, help="Circumferential subdivisions.")
@click.option("--periodic", is_flag=True, help="Fiber wraps periodically through the unit cell.")
@click.option("--two-fibers", is_flag=True, help="Write the built-in two-fiber periodic cell instead.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@handled
def gen_fiber(control_points, radius, axial, circumferential, periodic, two_fibers, output):
    if two_fibers:
        m = merge_meshes([gen_fiber_mesh(s) for s in two_fiber_specs(radius, axial, circumferential)])
    else:
        if not control_points:
            raise click.UsageError("--control-points is required unless --two-fibers is given")
        pts = [_floats(p, 3) for p in control_points.split(";") if p.strip()]
        m = gen_fiber_mesh(FiberSpec(pts, radius, axial, circumferential, periodic))
    write_msh(output, m)
    _report_mesh(m, output)


@mesh.command("check")
@click.argument("path", type=click.Path(dir_okay=False))
@handled
def check(path):
    """Parse and validate an MSH file."""
    if not Path(path).is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    m = read_msh(path)
    m.validate()
    _report_mesh(m, path)
    tags = sorted({int(t) for b in m.blocks for t in np.unique(b.tags)})
    click.echo(f"element types: {', '.join(b.type for b in m.blocks) or 'none'}; tags: {tags}")


if __name__ == "__main__":  # pragma: no cover
    main()
