"""JSON schemas of every document the CLI emits."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict


class _Out(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SolveReportOut(_Out):
    iterations: int
    residual: float
    seconds: float
    solver: str
    preconditioner: str
    warnings: list[str]


class DofCounts(_Out):
    grid_nodes: int
    system_dofs: int
    full_dofs: int
    reduced_dofs: Optional[int] = None


class SolveOut(_Out):
    command: str
    bc_kind: str
    report: SolveReportOut
    dofs: DofCounts
    eta: Optional[float]
    timings: dict[str, float]
    outputs: list[str]


class Bounds(_Out):
    reuss: list[list[float]]
    voigt: list[list[float]]
    lower_margin: float
    upper_margin: float
    within: bool


class EnergyCheck(_Out):
    matrix: list[list[float]]
    relative_discrepancy: float
    flagged: bool


class EffectiveOut(_Out):
    physics: str
    bc_kind: str
    voigt_order: Optional[list[str]]
    matrix: list[list[float]]
    volume_fraction: float
    symmetric: bool
    asymmetry: float
    spd: bool
    bounds: Bounds
    energy_check: EnergyCheck
    solves: list[SolveReportOut]
    timings: dict[str, float]
    warnings: list[str]
    dofs: Optional[DofCounts] = None
    outputs: Optional[list[str]] = None


class DifferenceOut(_Out):
    euclidean: float
    l2: float
    h1_semi: float
    n: Optional[int]
    h: Optional[float]
    conformal_dofs: Optional[int]
    max_nodal: Optional[float]
    max_node: Optional[int]
    eta: Optional[float]


class ConvergenceOut(_Out):
    columns: list[str]
    rows: list[dict]
    slopes: dict[str, float]
    warnings: list[str]


class PixelizationOut(_Out):
    covered_cells: list[int]
    eta: float
    enveloping: bool
    gap_cells: list[int]
    h_mat: float
    h_inc: float
    warnings: list[str]


SCHEMAS = {
    "solve": SolveOut,
    "effective": EffectiveOut,
    "difference": DifferenceOut,
    "convergence": ConvergenceOut,
    "pixelization": PixelizationOut,
    "solve_report": SolveReportOut,
}


def json_schema(name: str) -> dict:
    return SCHEMAS[name].model_json_schema()
