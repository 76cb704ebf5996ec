"""Phantom-domain problems, uniform/periodic load batteries and effective tensors.

Macro strains use engineering shear in Voigt form (order 11, 22, (33,) 23,
13, 12), so the unit shear case has ``E12 = E21 = 0.5``. Unit stress cases
have ``S12 = S21 = 1``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import elements as el
from . import solver as sv
from .meshkit.grid import StructuredGrid
from .meshkit.mesh import UnstructuredMesh, merge_meshes
from .substitution import build_substitution

log = logging.getLogger(__name__)

BC_KINDS = ("kubc", "subc", "periodic")
SYM_TOL = 1e-8
ENERGY_TOL = 1e-6


def voigt_pairs(dim: int):
    if dim == 2:
        return [(0, 0), (1, 1), (0, 1)]
    return [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]


def strain_from_voigt(e, dim: int) -> np.ndarray:
    """Symmetric tensor from engineering-shear Voigt strain."""
    E = np.zeros((dim, dim))
    for k, (i, j) in enumerate(voigt_pairs(dim)):
        E[i, j] = E[j, i] = e[k] if i == j else e[k] / 2
    return E


def stress_from_voigt(s, dim: int) -> np.ndarray:
    S = np.zeros((dim, dim))
    for k, (i, j) in enumerate(voigt_pairs(dim)):
        S[i, j] = S[j, i] = s[k]
    return S


def voigt_from_stress(S) -> np.ndarray:
    S = np.asarray(S)
    return np.array([S[i, j] for i, j in voigt_pairs(S.shape[0])])


def voigt_from_strain(E) -> np.ndarray:
    E = np.asarray(E)
    return np.array([E[i, j] if i == j else 2 * E[i, j] for i, j in voigt_pairs(E.shape[0])])


@dataclass(frozen=True)
class LoadCase:
    """``macro`` is a gradient/flux vector (thermal) or a symmetric tensor."""

    kind: str
    macro: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ValueError(f"unknown load-case kind {self.kind!r}")
        m = np.asarray(self.macro, float)
        if m.ndim == 2 and not np.allclose(m, m.T, rtol=0, atol=1e-14 * max(1.0, np.abs(m).max())):
            raise ValueError("macro tensors must be symmetric")
        object.__setattr__(self, "macro", m)


def unit_cases(kind: str, dim: int, physics: str) -> list[LoadCase]:
    if physics == "thermal":
        return [LoadCase(kind, np.eye(dim)[i], f"{kind}:{'xyz'[i]}") for i in range(dim)]
    m = 3 if dim == 2 else 6
    to_tensor = stress_from_voigt if kind == "subc" else strain_from_voigt
    names = ["".join(str(a + 1) for a in p) for p in voigt_pairs(dim)]
    return [LoadCase(kind, to_tensor(np.eye(m)[k], dim), f"{kind}:{names[k]}") for k in range(m)]


# --------------------------------------------------------------------------
# problem


class PhantomProblem:
    """Structured grid, matrix material and inclusion meshes with their material.

    ``inclusion`` is a material, an ``elements.Contrast`` or ``None``
    (no contrast). With ``periodic`` the grid DOFs are identified across
    opposite faces and inclusion nodes are located modulo the cell size.
    """

    def __init__(self, grid: StructuredGrid, matrix, inclusion=None, meshes=(), periodic: bool = False,
                 model: str | None = None, solver_options: dict | None = None):
        self.grid = grid
        self.matrix = matrix
        if inclusion is None:
            inclusion = matrix
        elif isinstance(inclusion, el.Contrast):
            inclusion = inclusion.inclusion_of(matrix)
        if type(inclusion) is not type(matrix):
            raise ValueError("matrix and inclusion materials must share the same physics")
        self.inclusion = inclusion
        if isinstance(meshes, UnstructuredMesh):
            meshes = [meshes]
        meshes = [m for m in meshes if m.n_nodes]
        for m in meshes:
            if m.dim != grid.dim:
                raise ValueError(f"inclusion mesh is {m.dim}D but the grid is {grid.dim}D")
        self.mesh = merge_meshes(meshes) if meshes else None
        self.periodic = periodic
        self.model = model or ("plane_strain" if grid.dim == 2 else "three_d")
        self.solver_options = dict(solver_options or {})
        self.timings: dict[str, float] = {}

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def physics(self) -> str:
        return self.matrix.physics

    @property
    def ncomp(self) -> int:
        return el.ncomp_of(self.matrix, self.dim)

    @property
    def measure(self) -> float:
        return self.grid.measure

    @property
    def volume_fraction(self) -> float:
        return 0.0 if self.mesh is None else self.mesh.measure() / self.measure

    def _timed(self, phase, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[phase] = self.timings.get(phase, 0.0) + time.perf_counter() - t0
        return out

    @cached_property
    def dofmap(self) -> asm.DofMap:
        if self.periodic:
            return sv.periodic_dofmap(self.grid, self.ncomp)
        return asm.grid_dofmap(self.grid, self.ncomp)

    @cached_property
    def tensors(self):
        return self.matrix.tensor(self.dim, self.model), self.inclusion.tensor(self.dim, self.model)

    @cached_property
    def K_mat_full(self) -> sp.csr_matrix:
        return self._timed("assembly", lambda: asm.assemble_Kmat(self.grid, self.matrix, model=self.model))

    @cached_property
    def S(self):
        if self.mesh is None:
            return None
        return self._timed("substitution", lambda: build_substitution(
            self.grid, self.mesh, self.ncomp, self.periodic or self.mesh.periodic_wrap))

    @cached_property
    def K_inc(self) -> sp.csr_matrix | None:
        if self.mesh is None:
            return None
        return self._timed("assembly", lambda: asm.assemble_Kinc(self.mesh, self.inclusion, self.matrix, self.model))

    @cached_property
    def K(self) -> sp.csr_matrix:
        """Combined phantom-domain matrix on the (possibly periodic) grid DOFs."""
        if self.mesh is not None and self.mesh.periodic_wrap and not self.periodic:
            raise ValueError("a periodically wrapped inclusion mesh needs a periodic problem")
        K_mat = self.K_mat_full
        if self.mesh is None:
            return self._timed("assembly", lambda: self.dofmap.reduce_matrix(K_mat))
        S, K_inc = self.S.matrix, self.K_inc
        return self._timed("assembly", lambda: asm.combine(self.dofmap.reduce_matrix(K_mat), S, K_inc))

    @cached_property
    def _grid_operator(self) -> np.ndarray:
        return el.integrated_operator(self.grid.element_type, self.grid.cell_geometry(), self.ncomp)

    @cached_property
    def _mesh_operators(self):
        return [(b, el.integrated_operator(b.type, self.mesh.block_coords(b), self.ncomp)) for b in self.mesh.blocks]

    def grid_integral(self, u_full: np.ndarray) -> np.ndarray:
        """``int_grid grad u`` (thermal) or ``int_grid eps(u)`` in Voigt form."""
        nc = self.ncomp
        U = np.asarray(u_full).reshape(-1, nc)[self.grid.cell_nodes].reshape(self.grid.n_cells, -1)
        return self._grid_operator @ U.sum(axis=0)

    def mesh_integral(self, v: np.ndarray) -> np.ndarray:
        """Same integral over the inclusion mesh for nodal values ``v``."""
        nc = self.ncomp
        V = np.asarray(v).reshape(-1, nc)
        out = 0.0
        for b, G in self._mesh_operators:
            out = out + np.einsum("emk,ek->m", G, V[b.connectivity].reshape(len(b), -1))
        return out

    def solve(self, K, rhs, label=""):
        opts = {k: v for k, v in self.solver_options.items() if k in ("tol", "max_iter", "preconditioner")}
        t0 = time.perf_counter()
        try:
            return sv.solve_cg(K, rhs, **opts)
        except sv.ConvergenceError as exc:
            raise sv.ConvergenceError(f"{label}: {exc}", exc.x, exc.report) from None
        finally:
            self.timings["solve"] = self.timings.get("solve", 0.0) + time.perf_counter() - t0


@dataclass
class Solution:
    """Grid nodal values (full numbering) and inclusion nodal values ``v``."""

    case: LoadCase
    u: np.ndarray
    v: np.ndarray | None
    report: sv.SolveReport


def _affine_values(x: np.ndarray, macro: np.ndarray) -> np.ndarray:
    return x @ macro if macro.ndim == 1 else (x @ macro.T).ravel()


def _inclusion_values(problem: PhantomProblem, u_dofs: np.ndarray, affine=None):
    if problem.mesh is None:
        return None
    v = problem.S.matrix @ u_dofs
    return v if affine is None else v + affine


def solve_kubc(problem: PhantomProblem, case: LoadCase) -> Solution:
    """Dirichlet problem with ``u = g.x`` or ``u = E x`` on the whole boundary."""
    if problem.periodic:
        raise ValueError("KUBC needs a non-periodic problem")
    grid, nc = problem.grid, problem.ncomp
    bn = grid.boundary_nodes()
    x = grid.node_coords()
    g_all = _affine_values(x, case.macro)
    fixed = (bn[:, None] * nc + np.arange(nc)).ravel()
    cons = sv.ConstraintSet("dirichlet", fixed=fixed, values=g_all[fixed])
    red = sv.apply_dirichlet(problem.K, np.zeros(problem.K.shape[0]), cons)
    xf, rep = problem.solve(red.K, red.rhs, case.label)
    u = red.recover(xf)
    return Solution(case, u, _inclusion_values(problem, u), rep)


def _rigid(problem: PhantomProblem):
    return sv.rigid_modes(problem.grid.node_coords(), problem.ncomp)


def solve_subc(problem: PhantomProblem, case: LoadCase) -> Solution:
    """Pure Neumann problem with uniform flux ``Q.n`` or traction ``S n``.

    Rigid modes are pinned for the solve and then removed by subtracting
    the mass-weighted mean (thermal) or best-fit rigid motion (elastic).
    """
    if problem.periodic:
        raise ValueError("SUBC needs a non-periodic problem")
    L = asm.uniform_boundary_load(problem.grid, case.macro)
    modes = _rigid(problem)
    try:
        red = sv.pin_rigid_modes(problem.K, L, problem.grid.node_coords(), problem.ncomp, modes)
    except sv.EquilibriumError as exc:
        raise sv.EquilibriumError(f"{case.label}: {exc}") from None
    xf, rep = problem.solve(red.K, red.rhs, case.label)
    u = sv.remove_rigid_motion(red.recover(xf), modes, _grid_mass(problem))
    return Solution(case, u, _inclusion_values(problem, u), rep)


def _grid_mass(problem: PhantomProblem):
    if "_mass" not in problem.__dict__:
        problem.__dict__["_mass"] = asm.assemble_mass(problem.grid, problem.ncomp)
    return problem.__dict__["_mass"]


def solve_periodic(problem: PhantomProblem, case: LoadCase) -> Solution:
    """Periodic fluctuation problem for the total field ``u = E x + u~``.

    The affine part is evaluated at the unwrapped grid nodes and at the
    unwrapped inclusion-node coordinates, so a fiber crossing a face sees a
    continuous macro field while its fluctuation is read from the wrapped
    grid location.
    """
    if not problem.periodic:
        raise ValueError("periodic load cases need a periodic problem")
    grid, nc, dm = problem.grid, problem.ncomp, problem.dofmap
    a_grid = _affine_values(grid.node_coords(), case.macro)
    rhs = -dm.reduce_vector(problem.K_mat_full @ a_grid)
    a_inc = None
    if problem.mesh is not None:
        a_inc = _affine_values(problem.mesh.nodes, case.macro)
        rhs -= problem.S.matrix.T @ (problem.K_inc @ a_inc)
    # translations are the only kernel: pin every component of one node
    cons = sv.ConstraintSet("periodic", pinned=np.arange(nc))
    red = sv.apply_dirichlet(problem.K, rhs, cons)
    xf, rep = problem.solve(red.K, red.rhs, case.label)
    w = red.recover(xf).reshape(-1, nc)
    w -= w.mean(axis=0)
    w = w.ravel()
    u = a_grid + dm.expand_vector(w)
    return Solution(case, u, _inclusion_values(problem, w, a_inc), rep)


def solve_mixed(problem: PhantomProblem, dirichlet=None, neumann=None, source=None) -> Solution:
    """General boundary-value problem with constant data on named grid sides.

    ``dirichlet`` and ``neumann`` map sides (``xmin`` ...) to a value or a
    flux/traction. Without Dirichlet sides the problem is pure Neumann and
    rigid modes are pinned, as for SUBC.
    """
    if problem.periodic:
        raise ValueError("explicit side conditions need a non-periodic problem")
    grid, nc = problem.grid, problem.ncomp
    L = asm.assemble_load(grid, source, neumann or {}, nc)
    case = LoadCase("kubc" if dirichlet else "subc", np.zeros(problem.dim), "mixed")
    if dirichlet:
        fixed, values = [], []
        for side, val in dirichlet.items():
            nodes = grid.side_nodes(side)
            val = np.broadcast_to(np.asarray(val, float), (nc,))
            fixed.append((nodes[:, None] * nc + np.arange(nc)).ravel())
            values.append(np.tile(val, nodes.size))
        fixed = np.concatenate(fixed)
        values = np.concatenate(values)
        fixed, first = np.unique(fixed, return_index=True)
        cons = sv.ConstraintSet("dirichlet", fixed=fixed, values=values[first])
        red = sv.apply_dirichlet(problem.K, L, cons)
        xf, rep = problem.solve(red.K, red.rhs, "mixed")
        u = red.recover(xf)
    else:
        modes = _rigid(problem)
        red = sv.pin_rigid_modes(problem.K, L, grid.node_coords(), nc, modes)
        xf, rep = problem.solve(red.K, red.rhs, "mixed")
        u = sv.remove_rigid_motion(red.recover(xf), modes, _grid_mass(problem))
    return Solution(case, u, _inclusion_values(problem, u), rep)


SOLVERS = {"kubc": solve_kubc, "subc": solve_subc, "periodic": solve_periodic}


# --------------------------------------------------------------------------
# averages


def average_gradient(problem: PhantomProblem, u_full: np.ndarray) -> np.ndarray:
    """Volume average of ``grad u`` (or Voigt strain) of the grid field."""
    return problem.grid_integral(u_full) / problem.measure


def average_flux(problem: PhantomProblem, u_full: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
    """Volume average of the flux ``Lambda grad u`` or Voigt stress.

    The matrix material is integrated over the whole grid and the material
    difference over the inclusion mesh with ``v = S u``.
    """
    T_mat, T_inc = problem.tensors
    total = T_mat @ problem.grid_integral(u_full)
    if problem.mesh is not None:
        if v is None:
            if problem.periodic:
                raise ValueError("periodic problems need the inclusion values v")
            v = problem.S.matrix @ u_full
        total = total + (T_inc - T_mat) @ problem.mesh_integral(v)
    return total / problem.measure


def energy_product(problem: PhantomProblem, a: Solution, b: Solution) -> float:
    """``u_a^T K_mat u_b + v_a^T K_inc v_b`` divided by the domain measure."""
    e = a.u @ (problem.K_mat_full @ b.u)
    if problem.mesh is not None:
        e += a.v @ (problem.K_inc @ b.v)
    return float(e / problem.measure)


# --------------------------------------------------------------------------
# bounds and effective tensors


def voigt_reuss_bounds(f: float, matrix_tensor, inclusion_tensor):
    """``(Reuss, Voigt)`` mixture tensors for inclusion fraction ``f``."""
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"volume fraction must lie in [0, 1], got {f}")
    A = np.atleast_2d(np.asarray(matrix_tensor, float))
    B = np.atleast_2d(np.asarray(inclusion_tensor, float))
    upper = f * B + (1 - f) * A
    lower = np.linalg.inv(f * np.linalg.inv(B) + (1 - f) * np.linalg.inv(A))
    return lower, upper


def loewner_margin(upper, lower) -> float:
    """Smallest eigenvalue of ``upper - lower`` relative to ``|upper|``."""
    d = np.asarray(upper) - np.asarray(lower)
    scale = max(np.linalg.norm(upper, 2), np.linalg.norm(lower, 2), 1e-300)
    return float(np.linalg.eigvalsh((d + d.T) / 2).min() / scale)


@dataclass
class EffectiveTensor:
    physics: str
    matrix: np.ndarray
    bc_kind: str
    volume_fraction: float
    reuss: np.ndarray
    voigt: np.ndarray
    energy_matrix: np.ndarray
    reports: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def asymmetry(self) -> float:
        A = self.matrix
        return float(np.linalg.norm(A - A.T) / np.linalg.norm(A))

    @property
    def symmetric(self) -> bool:
        return self.asymmetry <= SYM_TOL

    @property
    def spd(self) -> bool:
        return bool(np.linalg.eigvalsh((self.matrix + self.matrix.T) / 2).min() > 0)

    @property
    def bounds_margin(self) -> tuple[float, float]:
        return loewner_margin(self.matrix, self.reuss), loewner_margin(self.voigt, self.matrix)

    def within_bounds(self, tol: float = 1e-8) -> bool:
        lo, hi = self.bounds_margin
        return lo >= -tol and hi >= -tol

    @property
    def energy_discrepancy(self) -> float:
        return float(np.linalg.norm(self.energy_matrix - self.matrix) / np.linalg.norm(self.matrix))

    def to_dict(self) -> dict:
        lo, hi = self.bounds_margin
        return {
            "physics": self.physics,
            "bc_kind": self.bc_kind,
            "voigt_order": None if self.physics == "thermal" else
            ["".join(str(a + 1) for a in p) for p in voigt_pairs(3 if self.matrix.shape[0] == 6 else 2)],
            "matrix": self.matrix.tolist(),
            "volume_fraction": self.volume_fraction,
            "symmetric": self.symmetric,
            "asymmetry": self.asymmetry,
            "spd": self.spd,
            "bounds": {
                "reuss": self.reuss.tolist(),
                "voigt": self.voigt.tolist(),
                "lower_margin": lo,
                "upper_margin": hi,
                "within": self.within_bounds(),
            },
            "energy_check": {
                "matrix": self.energy_matrix.tolist(),
                "relative_discrepancy": self.energy_discrepancy,
                "flagged": self.energy_discrepancy > ENERGY_TOL,
            },
            "solves": [r.to_dict() for r in self.reports],
            "timings": dict(self.timings),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m = self.matrix.shape[0]
        w.writerow(["row"] + [f"c{j}" for j in range(m)])
        for i in range(m):
            w.writerow([i] + [repr(float(x)) for x in self.matrix[i]])
        return buf.getvalue()


def run_battery(problem: PhantomProblem, kind: str, cases: list[LoadCase] | None = None):
    """Solve the unit cases of ``kind``; return ``(EffectiveTensor, solutions)``."""
    if kind not in BC_KINDS:
        raise ValueError(f"unknown bc kind {kind!r}")
    cases = cases or unit_cases(kind, problem.dim, problem.physics)
    problem.K  # noqa: B018  (assemble before timing the solves)
    sols = [SOLVERS[kind](problem, c) for c in cases]
    t0 = time.perf_counter()
    n = len(sols)
    energy = np.array([[energy_product(problem, a, b) for b in sols] for a in sols])
    if kind == "subc":
        H = np.column_stack([average_gradient(problem, s.u) for s in sols])
        if np.linalg.cond(H) > 1e12:
            raise sv.SolverError("singular apparent compliance; degenerate input")
        A = np.linalg.inv(H)
        # energies of unit-stress cases give the compliance
        energy = np.linalg.inv((energy + energy.T) / 2)
    else:
        A = np.column_stack([average_flux(problem, s.u, s.v) for s in sols])
    problem.timings["post"] = problem.timings.get("post", 0.0) + time.perf_counter() - t0
    T_mat, T_inc = problem.tensors
    lower, upper = voigt_reuss_bounds(problem.volume_fraction, T_mat, T_inc)
    warnings = [w for s in sols for w in s.report.warnings]
    eff = EffectiveTensor(problem.physics, A, kind, problem.volume_fraction, lower, upper, energy,
                          [s.report for s in sols], dict(problem.timings), warnings)
    if n and eff.energy_discrepancy > ENERGY_TOL:
        msg = f"energy cross-check differs from averaged fields by {eff.energy_discrepancy:.2e}"
        log.warning(msg)
        eff.warnings.append(msg)
    return eff, sols


def run_kubc(problem: PhantomProblem, cases=None) -> EffectiveTensor:
    return run_battery(problem, "kubc", cases)[0]


def run_subc(problem: PhantomProblem, cases=None) -> EffectiveTensor:
    return run_battery(problem, "subc", cases)[0]


def run_periodic(problem: PhantomProblem, cases=None) -> EffectiveTensor:
    return run_battery(problem, "periodic", cases)[0]
