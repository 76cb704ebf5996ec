"""Declarative JSON problem configuration.

Validation errors are reported with JSON-pointer paths (``/grid/resolution``)
so a user can find the offending entry directly.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from . import elements as el
from .meshkit import (
    INCLUSION_TAG,
    FiberSpec,
    UnstructuredMesh,
    build_structured_grid,
    gen_disk_mesh,
    gen_fiber_mesh,
    gen_square_mesh,
    read_msh,
    two_fiber_specs,
)


class ConfigError(ValueError):
    """Invalid configuration; ``pointer`` locates the problem in the JSON."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer or "/"
        super().__init__(f"{self.pointer}: {message}")


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Model):
    resolution: Union[Annotated[int, Field(ge=1)], list[Annotated[int, Field(ge=1)]]]
    origin: list[float] | None = None
    lengths: list[Annotated[float, Field(gt=0)]] | None = None


class MaterialSpec(_Model):
    conductivity: Annotated[float, Field(gt=0)] | list[list[float]] | None = None
    bulk_modulus: Annotated[float, Field(gt=0)] | None = None
    poisson_ratio: Annotated[float, Field(gt=-1, lt=0.5)] | None = None


class MaterialsConfig(_Model):
    matrix: MaterialSpec
    inclusion: MaterialSpec | None = None
    contrast: Annotated[float, Field(gt=0)] | None = None

    @model_validator(mode="after")
    def _exclusive(self):
        if self.inclusion is not None and self.contrast is not None:
            raise ValueError("give either 'contrast' or explicit 'inclusion' coefficients, not both")
        return self


class DiskInclusion(_Model):
    shape: Literal["disk"]
    center: list[float]
    diameter: Annotated[float, Field(gt=0)]
    target_h: Annotated[float, Field(gt=0)]


class SquareInclusion(_Model):
    shape: Literal["square"]
    center: list[float]
    side: Annotated[float, Field(gt=0)]
    target_h: Annotated[float, Field(gt=0)]
    element: Literal["qua4", "tri3"] = "qua4"


class TriangleInclusion(_Model):
    shape: Literal["triangle"]
    vertices: list[list[float]] = Field(min_length=3, max_length=3)


class FiberInclusion(_Model):
    shape: Literal["fiber"]
    control_points: list[list[float]] = Field(min_length=2)
    radius: Annotated[float, Field(gt=0)]
    axial_subdivisions: Annotated[int, Field(ge=1)] = 30
    circumferential_subdivisions: Annotated[int, Field(ge=3)] = 16
    periodic_wrap: bool = False


class TwoFiberInclusion(_Model):
    shape: Literal["two_fibers"]
    radius: Annotated[float, Field(gt=0)] = 0.1
    axial_subdivisions: Annotated[int, Field(ge=1)] = 120
    circumferential_subdivisions: Annotated[int, Field(ge=3)] = 40


class MeshInclusion(_Model):
    shape: Literal["mesh"]
    path: str
    tag: int | None = INCLUSION_TAG


InclusionConfig = Annotated[
    Union[DiskInclusion, SquareInclusion, TriangleInclusion, FiberInclusion, TwoFiberInclusion, MeshInclusion],
    Field(discriminator="shape"),
]


class BCConfig(_Model):
    """A uniform/periodic battery, or explicit side conditions (``kind = mixed``)."""

    kind: Literal["kubc", "subc", "periodic", "mixed"]
    macro: list[float] | list[list[float]] | None = None
    dirichlet: dict[str, float | list[float]] = Field(default_factory=dict)
    neumann: dict[str, float | list[float]] = Field(default_factory=dict)
    source: float | list[float] | None = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind != "mixed" and (self.dirichlet or self.neumann or self.source is not None):
            raise ValueError("explicit dirichlet/neumann/source entries need kind = 'mixed'")
        if self.kind == "mixed" and self.macro is not None:
            raise ValueError("'macro' applies to kubc/subc/periodic batteries only")
        return self


class SolverConfig(_Model):
    tol: Annotated[float, Field(gt=0)] = 1e-10
    max_iter: Annotated[int, Field(ge=1)] | None = None
    preconditioner: Literal["ic0", "jacobi", "none"] = "ic0"


class OutputConfig(_Model):
    directory: str = "."
    prefix: str = "pdfem"
    vtk: bool = True
    json_: bool = Field(True, alias="json")
    csv: bool = True

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ProblemConfig(_Model):
    physics: Literal["thermal", "elastic"]
    dimension: Literal[2, 3]
    model: Literal["plane_strain", "plane_stress", "three_d"] | None = None
    grid: GridConfig
    materials: MaterialsConfig
    inclusions: list[InclusionConfig] = Field(default_factory=list)
    bc: BCConfig
    solver: SolverConfig = Field(default_factory=SolverConfig)
    outputs: OutputConfig = Field(default_factory=OutputConfig)
    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @model_validator(mode="after")
    def _checks(self):
        d = self.dimension
        for name in ("origin", "lengths"):
            v = getattr(self.grid, name)
            if v is not None and len(v) != d:
                raise _Located(f"/grid/{name}", f"expected {d} values, got {len(v)}")
        if isinstance(self.grid.resolution, list) and len(self.grid.resolution) != d:
            raise _Located("/grid/resolution", f"expected {d} values")
        for key, mat in (("matrix", self.materials.matrix), ("inclusion", self.materials.inclusion)):
            if mat is None:
                continue
            if self.physics == "thermal" and mat.conductivity is None:
                raise _Located(f"/materials/{key}", "thermal materials need 'conductivity'")
            if self.physics == "elastic" and (mat.bulk_modulus is None or mat.poisson_ratio is None):
                raise _Located(f"/materials/{key}", "elastic materials need 'bulk_modulus' and 'poisson_ratio'")
        if self.model == "three_d" and d == 2:
            raise _Located("/model", "three_d model needs dimension 3")
        for i, inc in enumerate(self.inclusions):
            if isinstance(inc, (FiberInclusion, TwoFiberInclusion)) and d != 3:
                raise _Located(f"/inclusions/{i}/shape", "fibers need dimension 3")
            if isinstance(inc, (DiskInclusion, SquareInclusion, TriangleInclusion)) and d != 2:
                raise _Located(f"/inclusions/{i}/shape", f"{inc.shape} inclusions need dimension 2")
        m = self.bc.macro
        if m is not None:
            want = (d,) if self.physics == "thermal" else (d, d)
            if np.asarray(m, dtype=float).shape != want:
                raise _Located("/bc/macro", f"expected shape {list(want)} for {self.physics} problems")
        return self


class _Located(ValueError):
    def __init__(self, pointer, message):
        self.pointer = pointer
        super().__init__(message)


_UNION_LABELS = {"disk", "square", "triangle", "fiber", "two_fibers", "mesh", "int", "float", "str", "bool"}


def _pointer(loc) -> str:
    """JSON pointer from a pydantic location, without union-member labels."""
    def label(p):
        return isinstance(p, str) and (p in _UNION_LABELS or "[" in p or p.startswith("constrained-")
                                       or p.endswith("Inclusion"))
    return "/" + "/".join(str(p) for p in loc if not label(p))


def parse_config(data: dict, base_dir=None) -> ProblemConfig:
    try:
        cfg = ProblemConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        ctx = err.get("ctx", {}).get("error")
        if isinstance(ctx, _Located):
            raise ConfigError(ctx.pointer, str(ctx)) from None
        raise ConfigError(_pointer(err["loc"]), err["msg"]) from None
    cfg._base_dir = Path(base_dir) if base_dir else Path.cwd()
    return cfg


def load_config(path) -> ProblemConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("/", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("/", "config must be a JSON object")
    return parse_config(data, path.parent)


def effective_config(cfg: ProblemConfig) -> dict:
    """Resolved config with every default filled in."""
    return cfg.model_dump(mode="json", by_alias=True)


# --------------------------------------------------------------------------
# builders


def build_grid(cfg: ProblemConfig):
    g = cfg.grid
    return build_structured_grid(cfg.dimension, g.resolution, g.origin, g.lengths)


def _material(cfg: ProblemConfig, spec: MaterialSpec):
    if cfg.physics == "thermal":
        c = spec.conductivity
        return el.ThermalMaterial(c if isinstance(c, float) or isinstance(c, int) else tuple(map(tuple, c)))
    return el.ElasticMaterial(spec.bulk_modulus, spec.poisson_ratio)


def build_materials(cfg: ProblemConfig):
    try:
        matrix = _material(cfg, cfg.materials.matrix)
    except ValueError as exc:
        raise ConfigError("/materials/matrix", str(exc)) from None
    if cfg.materials.contrast is not None:
        return matrix, el.Contrast(cfg.materials.contrast).inclusion_of(matrix)
    if cfg.materials.inclusion is None:
        return matrix, matrix
    try:
        return matrix, _material(cfg, cfg.materials.inclusion)
    except ValueError as exc:
        raise ConfigError("/materials/inclusion", str(exc)) from None


def resolve_path(cfg: ProblemConfig, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else cfg._base_dir / p


def build_inclusions(cfg: ProblemConfig) -> list[UnstructuredMesh]:
    meshes = []
    for i, inc in enumerate(cfg.inclusions):
        where = f"/inclusions/{i}"
        try:
            if isinstance(inc, DiskInclusion):
                meshes.append(gen_disk_mesh(inc.center, inc.diameter, inc.target_h))
            elif isinstance(inc, SquareInclusion):
                meshes.append(gen_square_mesh(inc.center, inc.side, inc.target_h, inc.element))
            elif isinstance(inc, TriangleInclusion):
                meshes.append(UnstructuredMesh.single(np.asarray(inc.vertices, float), "tri3", [[0, 1, 2]]))
            elif isinstance(inc, FiberInclusion):
                meshes.append(gen_fiber_mesh(FiberSpec(
                    inc.control_points, inc.radius, inc.axial_subdivisions,
                    inc.circumferential_subdivisions, inc.periodic_wrap)))
            elif isinstance(inc, TwoFiberInclusion):
                meshes += [gen_fiber_mesh(s) for s in two_fiber_specs(
                    inc.radius, inc.axial_subdivisions, inc.circumferential_subdivisions)]
            else:
                path = resolve_path(cfg, inc.path)
                if not path.is_file():
                    raise ConfigError(f"{where}/path", f"mesh file not found: {path}")
                m = read_msh(path)
                meshes.append(m.select(inc.tag) if inc.tag is not None else m)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
    return meshes


def macro_of(cfg: ProblemConfig):
    return None if cfg.bc.macro is None else np.asarray(cfg.bc.macro, float)
