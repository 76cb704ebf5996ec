"""Linear isoparametric elements, quadrature and constitutive laws.

Reference elements
------------------
``qua4`` / ``hex8`` live on ``[-1, 1]^d`` with nodes ordered counter-clockwise
(bottom face first for ``hex8``). ``tri3`` / ``tet4`` live on the unit simplex
``{xi >= 0, sum(xi) <= 1}`` with the origin as first node.

Every local-matrix routine accepts either one element (``coords`` of shape
``(nen, dim)``) or a batch (``(nel, nen, dim)``) and returns a matching shape.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

ELEMENT_DIM = {"tri3": 2, "qua4": 2, "tet4": 3, "hex8": 3}
NODES_PER_ELEMENT = {"tri3": 3, "qua4": 4, "tet4": 4, "hex8": 8}
SIMPLEX = {"tri3", "tet4"}

# Number of element integrations performed by the local-matrix routines.
# assemble_Kmat relies on this to prove it integrates exactly one cell.
STATS: Counter = Counter()

_QUA4_NODES = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
_HEX8_NODES = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=float,
)
_REF_TOL = 1e-9


class GeometryError(ValueError):
    """Element with a non-positive Jacobian determinant."""


def _check_type(element_type: str) -> None:
    if element_type not in ELEMENT_DIM:
        raise ValueError(f"unsupported element type {element_type!r}")


def reference_nodes(element_type: str) -> np.ndarray:
    _check_type(element_type)
    if element_type == "qua4":
        return _QUA4_NODES.copy()
    if element_type == "hex8":
        return _HEX8_NODES.copy()
    dim = ELEMENT_DIM[element_type]
    return np.vstack([np.zeros(dim), np.eye(dim)])


def reference_measure(element_type: str) -> float:
    return {"tri3": 0.5, "qua4": 4.0, "tet4": 1.0 / 6.0, "hex8": 8.0}[element_type]


def _check_inside(element_type: str, xi: np.ndarray) -> None:
    if element_type in SIMPLEX:
        bad = (xi < -_REF_TOL).any(axis=-1) | (xi.sum(axis=-1) > 1 + _REF_TOL)
    else:
        bad = (np.abs(xi) > 1 + _REF_TOL).any(axis=-1)
    if np.any(bad):
        raise ValueError(f"reference point outside the {element_type} reference element")


def shape_values(element_type: str, ref_point) -> np.ndarray:
    """Nodal shape function values at one or several reference points."""
    _check_type(element_type)
    xi = np.asarray(ref_point, dtype=float)
    if xi.shape[-1] != ELEMENT_DIM[element_type]:
        raise ValueError("reference point has wrong dimension")
    _check_inside(element_type, xi)
    if element_type in SIMPLEX:
        return np.concatenate([1.0 - xi.sum(axis=-1, keepdims=True), xi], axis=-1)
    nodes = reference_nodes(element_type)
    factors = 1.0 + xi[..., None, :] * nodes
    return np.prod(factors, axis=-1) / 2 ** nodes.shape[1]


def shape_gradients(element_type: str, ref_point) -> np.ndarray:
    """Reference gradients, shape ``(..., dim, nen)``."""
    _check_type(element_type)
    xi = np.asarray(ref_point, dtype=float)
    dim = ELEMENT_DIM[element_type]
    if xi.shape[-1] != dim:
        raise ValueError("reference point has wrong dimension")
    _check_inside(element_type, xi)
    if element_type in SIMPLEX:
        grad = np.hstack([-np.ones((dim, 1)), np.eye(dim)])
        return np.broadcast_to(grad, xi.shape[:-1] + grad.shape).copy()
    nodes = reference_nodes(element_type)
    factors = 1.0 + xi[..., None, :] * nodes  # (..., nen, dim)
    out = np.empty(xi.shape[:-1] + (dim, nodes.shape[0]))
    for a in range(dim):
        others = np.delete(factors, a, axis=-1)
        out[..., a, :] = nodes[:, a] * np.prod(others, axis=-1)
    return out / 2**dim


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")


@lru_cache(maxsize=None)
def _gauss_tensor(dim: int, npts: int) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(npts)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return QuadratureRule(pts, wts)


@lru_cache(maxsize=None)
def _collapsed_simplex(dim: int, npts: int) -> QuadratureRule:
    """Duffy-collapsed Gauss rule on the unit simplex."""
    x, w = np.polynomial.legendre.leggauss(npts)
    u, wu = (x + 1) / 2, w / 2
    if dim == 2:
        a, b = np.meshgrid(u, u, indexing="ij")
        wa, wb = np.meshgrid(wu, wu, indexing="ij")
        pts = np.stack([a * (1 - b), b], axis=-1).reshape(-1, 2)
        wts = (wa * wb * (1 - b)).ravel()
    else:
        a, b, c = np.meshgrid(u, u, u, indexing="ij")
        wa, wb, wc = np.meshgrid(wu, wu, wu, indexing="ij")
        pts = np.stack([a * (1 - b) * (1 - c), b * (1 - c), c], axis=-1).reshape(-1, 3)
        wts = (wa * wb * wc * (1 - b) * (1 - c) ** 2).ravel()
    return QuadratureRule(pts, wts)


def quadrature(element_type: str, order: int | None = None) -> QuadratureRule:
    """Quadrature rule; ``order`` is the number of Gauss points per axis.

    The default is the one-point rule for simplices and 2 points per axis
    for tensor-product elements.
    """
    _check_type(element_type)
    dim = ELEMENT_DIM[element_type]
    if element_type in SIMPLEX:
        if order is None or order == 1:
            centroid = np.full((1, dim), 1.0 / (dim + 1))
            return QuadratureRule(centroid, np.array([reference_measure(element_type)]))
        return _collapsed_simplex(dim, order)
    return _gauss_tensor(dim, 2 if order is None else order)


def _as_batch(coords) -> tuple[np.ndarray, bool]:
    x = np.asarray(coords, dtype=float)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ValueError("coords must have shape (nen, dim) or (nel, nen, dim)")
    return x, False


def _mapped(element_type: str, x: np.ndarray, rule: QuadratureRule):
    """Physical gradients and |J| weights at the quadrature points.

    Returns ``dN`` of shape (nel, nq, dim, nen) and ``wdet`` (nel, nq).
    """
    dim = ELEMENT_DIM[element_type]
    if x.shape[1] != NODES_PER_ELEMENT[element_type] or x.shape[2] != dim:
        raise ValueError(f"coords do not describe {element_type} elements")
    dref = shape_gradients(element_type, rule.points)  # (nq, dim, nen)
    jac = np.einsum("qan,enb->eqab", dref, x)  # J[a, b] = d x_b / d xi_a
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        bad = int(np.argwhere((det <= 0).any(axis=1))[0, 0])
        raise GeometryError(f"element {bad} has a non-positive Jacobian determinant")
    dN = np.linalg.solve(jac, np.broadcast_to(dref, jac.shape[:2] + dref.shape[1:]))
    return dN, det * rule.weights


def jacobian_determinants(element_type: str, coords, rule: QuadratureRule | None = None) -> np.ndarray:
    x, _ = _as_batch(coords)
    rule = rule or quadrature(element_type)
    dref = shape_gradients(element_type, rule.points)
    jac = np.einsum("qan,enb->eqab", dref, x)
    return np.linalg.det(jac)


def element_measures(element_type: str, coords) -> np.ndarray:
    x, single = _as_batch(coords)
    _, wdet = _mapped(element_type, x, quadrature(element_type))
    out = wdet.sum(axis=1)
    return out[0] if single else out


def local_stiffness_thermal(element_type: str, node_coords, conductivity, rule=None) -> np.ndarray:
    """Conductivity matrix ``int (Lambda grad N_a) . grad N_b``.

    ``conductivity`` may be a scalar or a d x d tensor; an indefinite tensor
    (difference of two materials) is accepted.
    """
    x, single = _as_batch(node_coords)
    dim = ELEMENT_DIM[element_type]
    lam = np.asarray(conductivity, dtype=float)
    if lam.ndim == 0:
        lam = lam * np.eye(dim)
    rule = rule or quadrature(element_type)
    dN, wdet = _mapped(element_type, x, rule)
    LdN = np.einsum("ab,eqbm->eqam", lam, dN, optimize=True) * wdet[:, :, None, None]
    ke = np.einsum("eqan,eqam->enm", dN, LdN, optimize=True)
    STATS["local_quadrature"] += x.shape[0]
    return ke[0] if single else ke


def strain_operator(dN: np.ndarray) -> np.ndarray:
    """Voigt B-matrix from physical gradients ``(..., dim, nen)``.

    Voigt order is 11, 22, 12 in 2D and 11, 22, 33, 23, 13, 12 in 3D, with
    engineering shear strains. DOFs are node-major, component-minor.
    """
    dim, nen = dN.shape[-2:]
    if dim == 2:
        B = np.zeros(dN.shape[:-2] + (3, 2 * nen))
        dx, dy = dN[..., 0, :], dN[..., 1, :]
        B[..., 0, 0::2] = dx
        B[..., 1, 1::2] = dy
        B[..., 2, 0::2] = dy
        B[..., 2, 1::2] = dx
        return B
    B = np.zeros(dN.shape[:-2] + (6, 3 * nen))
    dx, dy, dz = dN[..., 0, :], dN[..., 1, :], dN[..., 2, :]
    B[..., 0, 0::3] = dx
    B[..., 1, 1::3] = dy
    B[..., 2, 2::3] = dz
    B[..., 3, 1::3] = dz
    B[..., 3, 2::3] = dy
    B[..., 4, 0::3] = dz
    B[..., 4, 2::3] = dx
    B[..., 5, 0::3] = dy
    B[..., 5, 1::3] = dx
    return B


def local_stiffness_elastic(element_type: str, node_coords, D, rule=None) -> np.ndarray:
    x, single = _as_batch(node_coords)
    D = np.asarray(D, dtype=float)
    rule = rule or quadrature(element_type)
    dN, wdet = _mapped(element_type, x, rule)
    B = strain_operator(dN)
    DB = np.einsum("st,eqtj->eqsj", D, B, optimize=True) * wdet[:, :, None, None]
    ke = np.einsum("eqsi,eqsj->eij", B, DB, optimize=True)
    STATS["local_quadrature"] += x.shape[0]
    return ke[0] if single else ke


def local_mass(element_type: str, node_coords, rule=None) -> np.ndarray:
    """Consistent (scalar) mass matrix."""
    x, single = _as_batch(node_coords)
    if rule is None:
        rule = quadrature(element_type, 3)
    N = shape_values(element_type, rule.points)  # (nq, nen)
    _, wdet = _mapped(element_type, x, rule)
    me = np.einsum("qa,qb,eq->eab", N, N, wdet)
    STATS["local_quadrature"] += x.shape[0]
    return me[0] if single else me


def integrated_gradients(element_type: str, node_coords, rule=None) -> np.ndarray:
    """``int_e grad N_a`` per element, shape ``(nel, dim, nen)``."""
    x, single = _as_batch(node_coords)
    rule = rule or quadrature(element_type)
    dN, wdet = _mapped(element_type, x, rule)
    g = np.einsum("eqan,eq->ean", dN, wdet)
    return g[0] if single else g


def integrated_operator(element_type: str, node_coords, ncomp: int, rule=None) -> np.ndarray:
    """``int_e grad N`` (ncomp 1) or ``int_e B`` (elastic), per element."""
    if ncomp == 1:
        return integrated_gradients(element_type, node_coords, rule)
    x, single = _as_batch(node_coords)
    rule = rule or quadrature(element_type)
    dN, wdet = _mapped(element_type, x, rule)
    B = np.einsum("eqmk,eq->emk", strain_operator(dN), wdet)
    return B[0] if single else B


# --------------------------------------------------------------------------
# constitutive laws


def elastic_D(k: float, nu: float, dim: int, model: str = "plane_strain") -> np.ndarray:
    """Isotropic Voigt stiffness from bulk modulus and Poisson ratio."""
    if not -1.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    if k <= 0:
        raise ValueError(f"bulk modulus must be positive, got {k}")
    E = 3.0 * k * (1.0 - 2.0 * nu)
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    if dim == 3 or model == "three_d":
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[np.arange(3), np.arange(3)] += 2 * mu
        D[np.arange(3, 6), np.arange(3, 6)] = mu
        return D
    if model == "plane_stress":
        lam = 2 * lam * mu / (lam + 2 * mu)
    elif model != "plane_strain":
        raise ValueError(f"unknown 2D elasticity model {model!r}")
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


@dataclass(frozen=True)
class ThermalMaterial:
    """Conductivity; a scalar means an isotropic tensor."""

    conductivity: float | tuple = 1.0
    ncomp = 1
    physics = "thermal"

    def __post_init__(self):
        lam = np.asarray(self.conductivity, dtype=float)
        if lam.ndim == 0:
            if lam <= 0:
                raise ValueError("conductivity must be positive")
        else:
            if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
                raise ValueError("conductivity tensor must be square")
            if not np.allclose(lam, lam.T, rtol=0, atol=1e-12 * np.abs(lam).max()):
                raise ValueError("conductivity tensor must be symmetric")
            if np.linalg.eigvalsh(lam).min() <= 0:
                raise ValueError("conductivity tensor must be positive definite")
            object.__setattr__(self, "conductivity", tuple(map(tuple, lam.tolist())))

    def tensor(self, dim: int, model: str = "plane_strain") -> np.ndarray:
        lam = np.asarray(self.conductivity, dtype=float)
        return lam * np.eye(dim) if lam.ndim == 0 else lam.copy()

    def scaled(self, c: float) -> "ThermalMaterial":
        lam = np.asarray(self.conductivity, dtype=float) * c
        return ThermalMaterial(float(lam) if lam.ndim == 0 else tuple(map(tuple, lam.tolist())))


@dataclass(frozen=True)
class ElasticMaterial:
    bulk_modulus: float = 1.0
    poisson_ratio: float = 0.3
    physics = "elastic"

    def __post_init__(self):
        elastic_D(self.bulk_modulus, self.poisson_ratio, 3)  # validates

    def tensor(self, dim: int, model: str = "plane_strain") -> np.ndarray:
        return elastic_D(self.bulk_modulus, self.poisson_ratio, dim, model)

    def scaled(self, c: float) -> "ElasticMaterial":
        return ElasticMaterial(self.bulk_modulus * c, self.poisson_ratio)


Material = ThermalMaterial | ElasticMaterial


@dataclass(frozen=True)
class Contrast:
    c: float = field(default=1.0)

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"contrast must be positive, got {self.c}")

    def inclusion_of(self, matrix: Material) -> Material:
        return matrix.scaled(self.c)


def ncomp_of(material: Material, dim: int) -> int:
    return 1 if isinstance(material, ThermalMaterial) else dim


def local_stiffness(element_type: str, node_coords, tensor: np.ndarray, ncomp: int) -> np.ndarray:
    """Thermal or elastic local matrix depending on ``ncomp``."""
    if ncomp == 1:
        return local_stiffness_thermal(element_type, node_coords, tensor)
    return local_stiffness_elastic(element_type, node_coords, tensor)
