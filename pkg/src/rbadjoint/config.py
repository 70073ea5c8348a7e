"""Run configuration: JSON schema, benchmark merging and problem construction."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .hht import HHTParams, TimeGrid
from .material import MaterialParams
from .mesh import LOAD_KINDS, LoadCase, build_structured_mesh
from .objectives import OBJECTIVE_KINDS, Objective
from .optimize import OptConfig
from .problem import DynamicProblem

SCHEMA_VERSION = 1
BENCHMARKS = ("cantilever", "support", "building")


class ConfigError(ValueError):
    """Invalid configuration; the message lists offending key paths."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SupportSpec(_Strict):
    side: Literal["left", "right", "bottom", "top"]
    directions: Literal["x", "y", "xy"] = "xy"


class MeshSpec(_Strict):
    nx: int = Field(gt=0)
    ny: int = Field(gt=0)
    lx: float = Field(gt=0)
    ly: float = Field(gt=0)
    thickness: float = Field(gt=0)
    supports: list[SupportSpec] = Field(min_length=1)


class MaterialSpec(_Strict):
    E0: float = 200e9
    nu: float = 0.3
    rho0: float = 7800.0
    chi: float = 8.0
    eta: float = 0.5
    kappa: float = 8.0
    ersatz: float = 1e-4
    alpha_M: float = 10.0
    alpha_K: float = 1e-5


Point = tuple[float, float]


class LumpedMassSpec(_Strict):
    point: Point
    mass: float = Field(gt=0)


class LoadSpec(_Strict):
    kind: str
    points: list[Point] = []
    amplitude: float = 1000.0
    direction: tuple[float, float] = (0.0, -1.0)
    duration: float | None = Field(default=None, gt=0)
    omega: float | None = None
    lumped_masses: list[LumpedMassSpec] = []

    @field_validator("kind")
    @classmethod
    def _kind(cls, v):
        if v not in LOAD_KINDS:
            raise ValueError(f"must be one of {', '.join(LOAD_KINDS)}")
        return v


class TargetSpec(_Strict):
    point: Point
    component: Literal["x", "y"] = "y"


class ObjectiveSpec(_Strict):
    kind: str
    target: TargetSpec | None = None

    @field_validator("kind")
    @classmethod
    def _kind(cls, v):
        if v not in OBJECTIVE_KINDS:
            raise ValueError(f"must be one of {', '.join(OBJECTIVE_KINDS)}")
        return v

    @model_validator(mode="after")
    def _target(self):
        if self.kind == "squared_target_displacement" and self.target is None:
            raise ValueError("squared_target_displacement needs a target")
        return self


class ProblemSpec(_Strict):
    benchmark: str | None = None
    mesh: MeshSpec
    material: MaterialSpec = MaterialSpec()
    load: LoadSpec
    objective: ObjectiveSpec


class TimeSpec(_Strict):
    n_steps: int = Field(gt=0)
    total_time: float = Field(gt=0)
    alpha: float = Field(default=0.05, ge=0.0, le=1.0 / 3.0)


class RomSpec(_Strict):
    n_samples: int = Field(default=40, gt=0)
    harvest_iterations: int = Field(default=60, gt=0)
    skip_initial: int = Field(default=5, ge=0)
    harvest_start: Literal["skip", "trigger"] = "trigger"
    tol: float = Field(default=0.0, ge=0.0)
    max_basis: int = Field(default=20, gt=0)
    enrichment: Literal["snapshot", "projection_error"] = "projection_error"
    seed: int = Field(default=0, ge=0)
    hidden: list[int] = [32]
    epochs: int = Field(default=20000, gt=0)
    lr: float = Field(default=0.1, gt=0)
    holdout_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    estimator_mode: Literal["sequence", "per_step"] = "sequence"


class OptimizerSpec(_Strict):
    volume_fraction: float = Field(default=0.5, gt=0, lt=1)
    max_iterations: int = Field(default=60, ge=0)
    move_limit: float = Field(default=0.2, gt=0, le=1)
    tol: float = Field(default=1e-3, ge=0)
    eps1: float = Field(default=0.1, gt=0, lt=1)
    eps2: float = Field(default=0.005, ge=0, lt=1)
    use_rom: bool = False
    rom_dimension: int | None = Field(default=None, gt=0)
    estimator: Literal["none", "fnn", "gain_baseline", "true"] = "none"
    filter_radius: float | None = Field(default=None, gt=0)

    def to_opt_config(self) -> OptConfig:
        return OptConfig(**self.model_dump())


class GradcheckSpec(_Strict):
    n_probes: int = Field(default=10, gt=0)
    fd_step: float = Field(default=1e-6, gt=0)
    threshold: float = Field(default=1e-4, gt=0)
    density_low: float = Field(default=0.3, ge=0, le=1)
    density_high: float = Field(default=0.9, ge=0, le=1)


class OutputSpec(_Strict):
    directory: str | None = None
    trajectory_dofs: list[int] | None = None


class RunConfig(_Strict):
    schema_version: Literal[1]
    seed: int = Field(default=0, ge=0)
    problem: ProblemSpec
    time: TimeSpec
    rom: RomSpec = RomSpec()
    optimizer: OptimizerSpec = OptimizerSpec()
    gradcheck: GradcheckSpec = GradcheckSpec()
    output: OutputSpec = OutputSpec()


def load_benchmark(name: str) -> dict:
    if name not in BENCHMARKS:
        raise ConfigError(f"problem.benchmark: unknown benchmark {name!r} (choose from {', '.join(BENCHMARKS)})")
    text = resources.files("rbadjoint").joinpath(f"benchmarks/{name}.json").read_text()
    return json.loads(text)


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(raw: dict) -> RunConfig:
    """Validate a raw mapping; a named benchmark supplies defaults for ``problem`` and ``time``."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>: configuration must be a JSON object")
    bench = (raw.get("problem") or {}).get("benchmark") if isinstance(raw.get("problem"), dict) else None
    if bench is not None:
        raw = deep_merge(load_benchmark(bench), raw)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return parse_config(raw)


def benchmark_config(name: str, **overrides) -> RunConfig:
    """Validated config for a built-in benchmark, with nested dict overrides."""
    raw = deep_merge({"schema_version": SCHEMA_VERSION, "problem": {"benchmark": name}}, overrides)
    return parse_config(raw)


def _node_at(mesh, point) -> int:
    px, py = point
    if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0):
        raise ConfigError(f"point {point} must be given as fractions of the domain in [0, 1]")
    return mesh.node_id(int(round(px * mesh.nx)), int(round(py * mesh.ny)))


def build_problem(cfg: RunConfig) -> DynamicProblem:
    p = cfg.problem
    mesh = build_structured_mesh(p.mesh.nx, p.mesh.ny, p.mesh.lx, p.mesh.ly, p.mesh.thickness)
    fixed = []
    for s in p.mesh.supports:
        dirs = tuple({"x": 0, "y": 1}[c] for c in s.directions)
        fixed += mesh.dofs_on(s.side, dirs)
    mesh = mesh.with_fixed_dofs(fixed)
    try:
        material = MaterialParams(**p.material.model_dump())
        load = LoadCase(
            kind=p.load.kind,
            nodes=tuple(_node_at(mesh, pt) for pt in p.load.points),
            amplitude=p.load.amplitude,
            direction=tuple(p.load.direction),
            duration=p.load.duration,
            omega=p.load.omega,
            lumped_masses=tuple((_node_at(mesh, m.point), m.mass) for m in p.load.lumped_masses),
        )
        target = None
        if p.objective.target is not None:
            node = _node_at(mesh, p.objective.target.point)
            dof = 2 * node + (1 if p.objective.target.component == "y" else 0)
            target = int(mesh.full_to_free[dof])
            if target >= mesh.n_free:
                raise ConfigError("problem.objective.target: target dof is constrained")
        objective = Objective(p.objective.kind, target)
        grid = TimeGrid.from_total(cfg.time.n_steps, cfg.time.total_time)
        hht = HHTParams.from_alpha(cfg.time.alpha)
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"problem: {err}") from None
    if mesh.n_free == 0:
        raise ConfigError("problem.mesh.supports: every dof is constrained")
    return DynamicProblem(mesh, material, load, objective, grid, hht, name=p.benchmark or "custom")
