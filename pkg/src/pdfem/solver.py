"""Constraints and the preconditioned conjugate gradient solver."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .assembly import DofMap
from .meshkit.grid import StructuredGrid

log = logging.getLogger(__name__)

IC_SHIFTS = (0.0, 1e-3, 1e-2, 1e-1)


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, x=None, report=None):
        super().__init__(message)
        self.x = x
        self.report = report


class EquilibriumError(SolverError):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual: float
    seconds: float
    solver: str = "cg"
    preconditioner: str = "ic0"
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "seconds": self.seconds,
            "solver": self.solver,
            "preconditioner": self.preconditioner,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# --------------------------------------------------------------------------
# incomplete Cholesky IC(0)


@numba.njit(cache=True)
def _ic0_factor(n, indptr, indices, data):
    """In-place IC(0) on a lower-triangular CSR pattern (diagonal last per row).

    Returns the factor values and the row of a non-positive pivot (-1 if none).
    """
    L = data.copy()
    for i in range(n):
        start = indptr[i]
        end = indptr[i + 1]
        for kk in range(start, end):
            k = indices[kk]
            s = L[kk]
            p = start
            q = indptr[k]
            qend = indptr[k + 1] - 1
            while p < kk and q < qend:
                cp = indices[p]
                cq = indices[q]
                if cp == cq:
                    s -= L[p] * L[q]
                    p += 1
                    q += 1
                elif cp < cq:
                    p += 1
                else:
                    q += 1
            if k < i:
                L[kk] = s / L[indptr[k + 1] - 1]
            else:
                if s <= 0.0:
                    return L, i
                L[kk] = math.sqrt(s)
    return L, -1


@numba.njit(cache=True)
def _ic0_apply(n, indptr, indices, L, r):
    y = r.copy()
    for i in range(n):
        s = y[i]
        end = indptr[i + 1] - 1
        for kk in range(indptr[i], end):
            s -= L[kk] * y[indices[kk]]
        y[i] = s / L[end]
    for i in range(n - 1, -1, -1):
        end = indptr[i + 1] - 1
        y[i] /= L[end]
        xi = y[i]
        for kk in range(indptr[i], end):
            y[indices[kk]] -= L[kk] * xi
    return y


class IncompleteCholesky:
    """Zero-fill incomplete Cholesky factor ``L L^T ~ A (+ shift * diag A)``."""

    def __init__(self, A: sp.spmatrix, shift: float = 0.0):
        low = sp.tril(sp.csr_matrix(A), format="csr")
        low.sum_duplicates()
        low.sort_indices()
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise SolverError("matrix has a non-positive diagonal entry")
        ends = low.indptr[1:] - 1
        if np.any(low.indices[ends] != np.arange(low.shape[0])):
            raise SolverError("missing diagonal entry in the lower-triangular pattern")
        data = low.data.astype(float).copy()
        data[ends] *= 1.0 + shift
        self.n = low.shape[0]
        self.indptr = low.indptr.astype(np.int64)
        self.indices = low.indices.astype(np.int64)
        self.L, self.breakdown = _ic0_factor(self.n, self.indptr, self.indices, data)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return _ic0_apply(self.n, self.indptr, self.indices, self.L, np.ascontiguousarray(r, dtype=float))


def make_preconditioner(K: sp.spmatrix, kind: str = "ic0"):
    """Return ``(apply, name, warnings)``.

    IC(0) that meets a non-positive pivot is retried with growing diagonal
    shifts, then replaced by the Jacobi (diagonal) preconditioner.
    """
    warnings: list[str] = []
    diag = K.diagonal()
    if kind == "none":
        return (lambda r: r), "none", warnings
    if kind == "ic0":
        for shift in IC_SHIFTS:
            if np.any(diag <= 0):
                break
            ic = IncompleteCholesky(K, shift)
            if ic.breakdown < 0:
                name = "ic0" if shift == 0 else f"ic0(shift={shift:g})"
                if shift:
                    warnings.append(f"IC(0) broke down; used diagonal shift {shift:g}")
                return ic, name, warnings
        warnings.append("IC(0) breakdown; fell back to diagonal preconditioner")
        log.warning(warnings[-1])
    elif kind != "jacobi":
        raise ValueError(f"unknown preconditioner {kind!r}")
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    return (lambda r: inv * r), "jacobi", warnings


def default_max_iter(n: int) -> int:
    return int(20 * math.sqrt(max(n, 1))) + 1000


def solve_cg(K: sp.spmatrix, rhs: np.ndarray, tol: float = 1e-10, max_iter: int | None = None,
             preconditioner: str = "ic0", x0: np.ndarray | None = None):
    """Preconditioned CG until ``||K x - rhs|| <= tol * ||rhs||``.

    Raises ConvergenceError (carrying the last iterate and report) when
    ``max_iter`` is exhausted.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    K = sp.csr_matrix(K)
    b = np.asarray(rhs, dtype=float)
    n = b.size
    max_iter = default_max_iter(n) if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if n == 0 or bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, time.perf_counter() - t0, "cg", preconditioner)
    M, pname, warnings = make_preconditioner(K, preconditioner)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - K @ x
    it = 0
    for _restart in range(3):
        z = M(r)
        p = z.copy()
        rz = r @ z
        while np.linalg.norm(r) > tol * bnorm and it < max_iter:
            Kp = K @ p
            pKp = p @ Kp
            if pKp <= 0:
                warnings.append("non-positive curvature encountered")
                break
            alpha = rz / pKp
            x += alpha * p
            r -= alpha * Kp
            z = M(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
            it += 1
        # guard against drift of the recursive residual
        r = b - K @ x
        if np.linalg.norm(r) <= tol * bnorm or it >= max_iter:
            break
    res = float(np.linalg.norm(r) / bnorm)
    report = SolveReport(it, res, time.perf_counter() - t0, "cg", pname, warnings)
    if res > tol:
        raise ConvergenceError(f"CG did not reach tol={tol:g} in {it} iterations (residual {res:.3e})", x, report)
    return x, report


# --------------------------------------------------------------------------
# constraints


@dataclass
class ConstraintSet:
    kind: str
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    master: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann_pinned", "periodic"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        self.fixed = np.asarray(self.fixed, dtype=np.int64)
        self.values = np.broadcast_to(np.asarray(self.values, float), self.fixed.shape).copy()
        self.pinned = np.asarray(self.pinned, dtype=np.int64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("prescribed values must be finite")
        roles = np.concatenate([self.fixed, self.pinned])
        if np.unique(roles).size != roles.size:
            raise ValueError("a DOF appears twice among fixed/pinned constraints")


@dataclass
class ReducedSystem:
    K: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    values: np.ndarray
    n: int

    def recover(self, x_free: np.ndarray) -> np.ndarray:
        u = np.empty(self.n)
        u[self.fixed] = self.values
        u[self.free] = x_free
        return u

    def reduce(self, u_full: np.ndarray) -> np.ndarray:
        return np.asarray(u_full)[self.free]


def apply_dirichlet(K: sp.spmatrix, L: np.ndarray, constraints: ConstraintSet) -> ReducedSystem:
    """Symmetric elimination of prescribed DOFs."""
    n = K.shape[0]
    fixed = np.concatenate([constraints.fixed, constraints.pinned])
    values = np.concatenate([constraints.values, np.zeros(constraints.pinned.size)])
    if fixed.size and (fixed.min() < 0 or fixed.max() >= n):
        raise ValueError(f"constraint references a DOF outside 0..{n - 1}")
    order = np.argsort(fixed)
    fixed, values = fixed[order], values[order]
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    K = sp.csr_matrix(K)
    Kff = K[free][:, free]
    rhs = np.asarray(L, float)[free] - K[free][:, fixed] @ values
    return ReducedSystem(sp.csr_matrix(Kff), rhs, free, fixed, values, n)


def periodic_dofmap(grid: StructuredGrid, physics="thermal") -> DofMap:
    """DofMap identifying opposite faces; reduced DOFs = ncomp * prod(n_i)."""
    ncomp = physics if isinstance(physics, int) else (1 if physics == "thermal" else grid.dim)
    return DofMap(ncomp, grid.n_nodes, grid.periodic_node_map())


def rigid_modes(coords: np.ndarray, ncomp: int) -> np.ndarray:
    """Columns spanning constants (thermal) or infinitesimal rigid motions."""
    coords = np.asarray(coords, float)
    n = coords.shape[0]
    if ncomp == 1:
        return np.ones((n, 1))
    dim = coords.shape[1]
    modes = []
    for c in range(dim):
        m = np.zeros((n, dim))
        m[:, c] = 1.0
        modes.append(m.ravel())
    x = coords - coords.mean(axis=0)
    if dim == 2:
        modes.append(np.column_stack([-x[:, 1], x[:, 0]]).ravel())
    else:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            m = np.zeros((n, 3))
            m[:, a], m[:, b] = -x[:, b], x[:, a]
            modes.append(m.ravel())
    return np.column_stack(modes)


def pinned_dofs(coords: np.ndarray, ncomp: int) -> np.ndarray:
    """DOFs whose zeroing removes the rigid modes.

    Thermal: one DOF. 2D elastic: node A (both components) and the y
    component of the node farthest from A. 3D elastic: A (3), B (y, z),
    and z of the node farthest from line AB.
    """
    coords = np.asarray(coords, float)
    a = int(np.lexsort(coords.T[::-1])[0])
    if ncomp == 1:
        return np.array([a])
    d = coords - coords[a]
    b = int(np.argmax(np.einsum("ij,ij->i", d, d)))
    if ncomp == 2:
        # rotate B's free direction so it is normal to AB
        ab = d[b] / np.linalg.norm(d[b])
        comp = 1 if abs(ab[0]) >= abs(ab[1]) else 0
        return np.array([2 * a, 2 * a + 1, 2 * b + comp])
    ab = d[b] / np.linalg.norm(d[b])
    perp = d - np.outer(d @ ab, ab)
    c = int(np.argmax(np.einsum("ij,ij->i", perp, perp)))
    major = int(np.argmax(np.abs(ab)))
    b_comps = [k for k in range(3) if k != major]
    normal = np.cross(ab, perp[c] / np.linalg.norm(perp[c]))
    c_comp = int(np.argmax(np.abs(normal)))
    return np.array([3 * a, 3 * a + 1, 3 * a + 2, 3 * b + b_comps[0], 3 * b + b_comps[1], 3 * c + c_comp])


def check_equilibrium(L: np.ndarray, modes: np.ndarray, rtol: float = 1e-8) -> None:
    Lnorm = np.linalg.norm(L)
    if Lnorm == 0:
        return
    q, _ = np.linalg.qr(modes)
    work = np.abs(q.T @ L)
    if work.max() > rtol * Lnorm:
        raise EquilibriumError(
            f"load is not self-equilibrated: rigid-mode work {work.max():.3e} exceeds {rtol:g} * |L| = {rtol * Lnorm:.3e}"
        )


def pin_rigid_modes(K: sp.spmatrix, L: np.ndarray, coords: np.ndarray, ncomp: int,
                    modes: np.ndarray | None = None) -> ReducedSystem:
    """Constrain a pure-Neumann system after checking the load's equilibrium."""
    modes = rigid_modes(coords, ncomp) if modes is None else modes
    check_equilibrium(L, modes)
    pins = pinned_dofs(coords, ncomp) if modes.shape[1] > 1 or ncomp == 1 else None
    if modes.shape[1] != (1 if ncomp == 1 else ncomp * (ncomp + 1) // 2):
        # translations only (periodic problems): pin every component of one node
        a = int(np.lexsort(np.asarray(coords).T[::-1])[0])
        pins = a * ncomp + np.arange(ncomp)
    return apply_dirichlet(K, L, ConstraintSet("neumann_pinned", pinned=pins))


def remove_rigid_motion(u: np.ndarray, modes: np.ndarray, M: sp.spmatrix | None = None) -> np.ndarray:
    """Subtract the (mass-weighted) least-squares rigid component of ``u``."""
    W = modes if M is None else M @ modes
    coef = np.linalg.solve(modes.T @ W, W.T @ u)
    return u - modes @ coef
