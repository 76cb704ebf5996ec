"""Conformal FEM references, projection of phantom-domain fields and convergence studies."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import elements as el
from . import solver as sv
from .homogenize import LoadCase, PhantomProblem, SOLVERS, Solution
from .meshkit.grid import StructuredGrid, build_structured_grid
from .meshkit.mesh import INCLUSION_TAG, MATRIX_TAG, UnstructuredMesh, grid_as_mesh
from .substitution import build_substitution, check_enveloping

log = logging.getLogger(__name__)


class DifferenceError(ValueError):
    pass


@dataclass
class ConformalProblem:
    """Tagged conformal mesh with one material per physical tag."""

    mesh: UnstructuredMesh
    materials: dict
    model: str | None = None
    solver_options: dict = field(default_factory=dict)

    def __post_init__(self):
        tags = set()
        for b in self.mesh.blocks:
            tags |= set(np.unique(b.tags).tolist())
        if not tags <= {MATRIX_TAG, INCLUSION_TAG}:
            raise ValueError(f"conformal mesh tags must be within {{1, 2}}, found {sorted(tags)}")
        missing = tags - set(self.materials)
        if missing:
            raise ValueError(f"no material for tag(s) {sorted(missing)}")
        kinds = {type(m) for m in self.materials.values()}
        if len(kinds) != 1:
            raise ValueError("all conformal materials must share the same physics")
        self.model = self.model or ("plane_strain" if self.mesh.dim == 2 else "three_d")

    @classmethod
    def two_phase(cls, mesh, matrix, inclusion, **kw) -> "ConformalProblem":
        if isinstance(inclusion, el.Contrast):
            inclusion = inclusion.inclusion_of(matrix)
        return cls(mesh, {MATRIX_TAG: matrix, INCLUSION_TAG: inclusion}, **kw)

    @property
    def ncomp(self) -> int:
        return el.ncomp_of(next(iter(self.materials.values())), self.mesh.dim)

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_nodes * self.ncomp

    @cached_property
    def K(self) -> sp.csr_matrix:
        tensors = {t: m.tensor(self.mesh.dim, self.model) for t, m in self.materials.items()}
        return asm.assemble_mesh_stiffness(self.mesh, tensors, self.ncomp)

    @cached_property
    def M(self) -> sp.csr_matrix:
        return asm.assemble_mass(self.mesh, self.ncomp)

    @cached_property
    def K_unit(self) -> sp.csr_matrix:
        """Unit-conductivity stiffness, block-diagonal per component (H1 semi-norm)."""
        Ks = asm.assemble_mesh_stiffness(self.mesh, np.eye(self.mesh.dim), 1)
        return asm.expand(Ks, self.ncomp)


@dataclass
class ConformalSolution:
    case: LoadCase
    u: np.ndarray
    report: sv.SolveReport

    def energy(self, problem: ConformalProblem) -> float:
        return 0.5 * float(self.u @ (problem.K @ self.u))


def _affine(x, macro):
    return x @ macro if macro.ndim == 1 else (x @ macro.T).ravel()


def solve_conformal(problem: ConformalProblem, case: LoadCase) -> ConformalSolution:
    """Classical FEM solve with the same boundary conditions as the phantom problem."""
    mesh, nc = problem.mesh, problem.ncomp
    opts = {k: v for k, v in problem.solver_options.items() if k in ("tol", "max_iter", "preconditioner")}
    if case.kind == "kubc":
        bn = asm.mesh_boundary_nodes(mesh)
        fixed = (bn[:, None] * nc + np.arange(nc)).ravel()
        values = _affine(mesh.nodes, case.macro)[fixed]
        red = sv.apply_dirichlet(problem.K, np.zeros(problem.n_dofs), sv.ConstraintSet("dirichlet", fixed, values))
        x, rep = sv.solve_cg(red.K, red.rhs, **opts)
        return ConformalSolution(case, red.recover(x), rep)
    if case.kind == "subc":
        L = asm.uniform_mesh_boundary_load(mesh, case.macro)
        modes = sv.rigid_modes(mesh.nodes, nc)
        red = sv.pin_rigid_modes(problem.K, L, mesh.nodes, nc, modes)
        x, rep = sv.solve_cg(red.K, red.rhs, **opts)
        return ConformalSolution(case, sv.remove_rigid_motion(red.recover(x), modes, problem.M), rep)
    raise ValueError(f"conformal reference supports kubc and subc, not {case.kind!r}")


def project_pdfem(grid: StructuredGrid, conformal_mesh: UnstructuredMesh, u_pdfem: np.ndarray,
                  dofs_per_node: int = 1) -> np.ndarray:
    """Interpolate grid nodal values at the conformal nodes (``S u``)."""
    S = build_substitution(grid, conformal_mesh, dofs_per_node)
    return S.matrix @ np.asarray(u_pdfem)


@dataclass
class DifferenceReport:
    euclidean: float
    l2: float
    h1_semi: float
    n: int | None = None
    h: float | None = None
    conformal_dofs: int | None = None
    max_nodal: float | None = None
    max_node: int | None = None
    eta: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("euclidean", "l2", "h1_semi", "n", "h", "conformal_dofs", "max_nodal", "max_node", "eta")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def relative_difference(u_fem: np.ndarray, u_proj: np.ndarray, M: sp.spmatrix, K: sp.spmatrix) -> DifferenceReport:
    """Euclidean, L2 and H1-semi relative differences of ``u_proj`` from ``u_fem``."""
    u = np.asarray(u_fem, float)
    e = u - np.asarray(u_proj, float)
    out = []
    uu = u @ u
    for name, A in (("euclidean", None), ("l2", M), ("h1_semi", K)):
        ref = uu if A is None else u @ (A @ u)
        err = e @ e if A is None else e @ (A @ e)
        # roundoff level counts as zero (a constant has zero H1 semi-norm)
        floor = 0.0 if A is None else 1e-12 * abs(A).max() * uu
        if not ref > floor:
            raise DifferenceError(f"reference solution has zero {name} norm; relative difference undefined")
        out.append(math.sqrt(max(err, 0.0) / ref))
    return DifferenceReport(*out, conformal_dofs=u.size)


def max_nodal_discrepancy(u_fem: np.ndarray, u_proj: np.ndarray, ncomp: int = 1):
    """``max_i |e_i| / max_i |u_i|`` over nodes (vector norms per node) and its node."""
    e = np.linalg.norm((np.asarray(u_fem) - u_proj).reshape(-1, ncomp), axis=1)
    scale = np.linalg.norm(np.asarray(u_fem).reshape(-1, ncomp), axis=1).max()
    if scale == 0:
        raise DifferenceError("reference solution is identically zero")
    i = int(np.argmax(e))
    return float(e[i] / scale), i


# --------------------------------------------------------------------------
# fixtures and studies


class ComparisonFixture:
    """Phantom-domain solve on any grid resolution against one conformal reference.

    The phantom inclusion mesh is the inclusion-tagged part of the conformal
    mesh unless ``inclusion_mesh`` is given, so both methods see the same
    inclusion geometry.
    """

    def __init__(self, conformal: ConformalProblem, case: LoadCase, inclusion_mesh: UnstructuredMesh | None = None,
                 grid_origin=None, grid_lengths=None):
        self.conformal = conformal
        self.case = case
        self.inclusion_mesh = inclusion_mesh if inclusion_mesh is not None else conformal.mesh.select(INCLUSION_TAG)
        self.grid_origin = grid_origin
        self.grid_lengths = grid_lengths

    @cached_property
    def reference(self) -> ConformalSolution:
        return solve_conformal(self.conformal, self.case)

    def grid(self, n: int) -> StructuredGrid:
        return build_structured_grid(self.conformal.mesh.dim, n, self.grid_origin, self.grid_lengths)

    def phantom_problem(self, n: int) -> PhantomProblem:
        mats = self.conformal.materials
        return PhantomProblem(self.grid(n), mats[MATRIX_TAG], mats.get(INCLUSION_TAG), [self.inclusion_mesh],
                              model=self.conformal.model, solver_options=self.conformal.solver_options)

    def solve_pdfem(self, n: int) -> tuple[PhantomProblem, Solution]:
        p = self.phantom_problem(n)
        return p, SOLVERS[self.case.kind](p, self.case)

    def fields(self, n: int) -> tuple[PhantomProblem, np.ndarray, np.ndarray]:
        """``(problem, u_fem, u_projected)`` on the conformal DOFs."""
        p, sol = self.solve_pdfem(n)
        conf = self.conformal
        u_proj = project_pdfem(p.grid, conf.mesh, sol.u, conf.ncomp)
        if self.case.kind == "subc":
            u_proj = sv.remove_rigid_motion(u_proj, sv.rigid_modes(conf.mesh.nodes, conf.ncomp), conf.M)
        return p, self.reference.u, u_proj

    def compare(self, n: int) -> DifferenceReport:
        return self.report(*self.fields(n))

    def report(self, p: PhantomProblem, u_ref: np.ndarray, u_proj: np.ndarray) -> DifferenceReport:
        conf = self.conformal
        n = p.grid.resolution[0]
        rep = relative_difference(u_ref, u_proj, conf.M, conf.K_unit)
        rep.n = n
        rep.h = p.grid.characteristic_length
        rep.max_nodal, rep.max_node = max_nodal_discrepancy(u_ref, u_proj, conf.ncomp)
        rep.eta = check_enveloping(p.grid, self.inclusion_mesh).eta
        return rep


def cells_inside(grid: StructuredGrid, mesh: UnstructuredMesh, tol: float = 1e-12) -> np.ndarray:
    """Boolean mask of grid cells whose center lies inside an element of ``mesh``."""
    centers = grid.cell_centers()
    inside = np.zeros(grid.n_cells, dtype=bool)
    splits = {"tri3": [[0, 1, 2]], "tet4": [[0, 1, 2, 3]], "qua4": [[0, 1, 2], [0, 2, 3]],
              "hex8": [[0, 1, 3, 4], [1, 2, 3, 6], [1, 4, 5, 6], [3, 4, 6, 7], [1, 3, 4, 6]]}
    for b in mesh.blocks:
        for simplex in splits[b.type]:
            x = mesh.nodes[b.connectivity[:, simplex]]  # (e, d+1, d)
            T = np.swapaxes(x[:, 1:] - x[:, :1], 1, 2)  # (e, d, d)
            Tinv = np.linalg.inv(T)
            lo, hi = x.min(axis=1), x.max(axis=1)
            for e in range(x.shape[0]):
                cand = np.flatnonzero(np.all((centers >= lo[e] - tol) & (centers <= hi[e] + tol), axis=1))
                if cand.size == 0:
                    continue
                lam = (centers[cand] - x[e, 0]) @ Tinv[e].T
                ok = np.all(lam >= -tol, axis=1) & (lam.sum(axis=1) <= 1 + tol)
                inside[cand[ok]] = True
    return inside


def conformal_from_grid(grid: StructuredGrid, inclusion_mesh: UnstructuredMesh, matrix, inclusion,
                        **kw) -> ConformalProblem:
    """Structured grid as a conformal mesh with per-cell materials.

    Exact as a reference only when the inclusion boundary follows grid
    lines (matching meshes).
    """
    tags = np.where(cells_inside(grid, inclusion_mesh), INCLUSION_TAG, MATRIX_TAG)
    return ConformalProblem.two_phase(grid_as_mesh(grid, tags), matrix, inclusion, **kw)


class SyntheticFixture:
    """Differences ``C * h`` exactly; checks the slope machinery."""

    def __init__(self, constant: float = 1.0, order: float = 1.0):
        self.constant = constant
        self.order = order

    def compare(self, n: int) -> DifferenceReport:
        h = 1.0 / n
        d = self.constant * h**self.order
        return DifferenceReport(d, d, d, n=n, h=h)


def fit_slope(h, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(h)``."""
    h = np.asarray(h, float)
    v = np.asarray(values, float)
    if h.size < 2 or np.any(h <= 0) or np.any(v <= 0):
        raise ValueError("slope fit needs at least two positive samples")
    return float(np.polyfit(np.log(h), np.log(v), 1)[0])


@dataclass
class ConvergenceTable:
    columns: list[str]
    rows: list[dict]
    slopes: dict
    warnings: list[str] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], float)

    def strictly_decreasing(self, name: str) -> bool:
        v = self.column(name)
        return bool(np.all(np.diff(v) < 0))

    def to_dict(self) -> dict:
        return {"columns": self.columns, "rows": self.rows, "slopes": self.slopes, "warnings": self.warnings}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns + ["warning"])
        for r in self.rows:
            w.writerow([r.get(c, "") for c in self.columns] + [r.get("warning", "")])
        for name, s in self.slopes.items():
            w.writerow(["slope", name] + [""] * (len(self.columns) - 2) + [s])
        return buf.getvalue()


def convergence_study(fixture: ComparisonFixture, resolutions) -> ConvergenceTable:
    """Field differences at each resolution, with log-log slopes versus ``h``."""
    resolutions = sorted(int(n) for n in resolutions)
    if len(resolutions) < 3:
        raise ValueError("a convergence study needs at least 3 resolutions")
    rows, warnings = [], []
    for n in resolutions:
        rep = fixture.compare(n)
        row = {"n": n, "h": rep.h, "euclid": rep.euclidean, "l2": rep.l2, "h1": rep.h1_semi, "eta": rep.eta}
        if rep.eta is not None and rep.eta < 1:
            row["warning"] = f"eta={rep.eta:.3g} < 1 at n={n}"
            warnings.append(row["warning"])
        rows.append(row)
    h = [r["h"] for r in rows]
    slopes = {k: fit_slope(h, [r[k] for r in rows]) for k in ("euclid", "l2", "h1")}
    return ConvergenceTable(["n", "h", "euclid", "l2", "h1", "eta"], rows, slopes, warnings)


def coefficient_convergence(tensors: dict, reference) -> ConvergenceTable:
    """Effective-coefficient differences ``|C(n) - C_ref|`` versus ``h = 1/n``.

    ``tensors`` maps resolution to effective matrix. Rows carry the
    Frobenius difference relative to ``|C_ref|`` and each entry of the
    upper triangle.
    """
    ref = np.asarray(reference, float)
    scale = np.linalg.norm(ref)
    iu = np.triu_indices(ref.shape[0])
    cols = ["n", "h", "frobenius"] + [f"C{i + 1}{j + 1}" for i, j in zip(*iu)]
    rows = []
    for n in sorted(tensors):
        d = np.asarray(tensors[n], float) - ref
        row = {"n": int(n), "h": 1.0 / n, "frobenius": float(np.linalg.norm(d) / scale)}
        row.update({f"C{i + 1}{j + 1}": float(abs(d[i, j])) for i, j in zip(*iu)})
        rows.append(row)
    slopes = {}
    if len(rows) >= 2 and all(r["frobenius"] > 0 for r in rows):
        slopes["frobenius"] = fit_slope([r["h"] for r in rows], [r["frobenius"] for r in rows])
    return ConvergenceTable(cols, rows, slopes)
