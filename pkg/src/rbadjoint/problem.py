"""A transient topology-optimization problem and its full-order analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import objectives
from .adjoint import AdjointTrajectory, assemble_gradient, solve_adjoint_full
from .hht import EffectiveOperators, HHTParams, TimeGrid, Trajectory, effective_operators, hht_solve
from .material import MaterialParams, interpolate
from .mesh import LoadCase, Mesh, SystemMatrices, assemble, evaluate_load
from .objectives import Objective


@dataclass(eq=False)
class Analysis:
    """Forward solution of one design, everything the adjoint needs."""

    density: np.ndarray
    system: SystemMatrices
    eff: EffectiveOperators
    traj: Trajectory
    value: float
    partials: np.ndarray


@dataclass(eq=False)
class DynamicProblem:
    mesh: Mesh
    material: MaterialParams
    load: LoadCase
    objective: Objective
    grid: TimeGrid
    hht: HHTParams = field(default_factory=HHTParams.from_alpha)
    name: str = "custom"

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    @property
    def n_free(self) -> int:
        return self.mesh.n_free

    def assemble(self, density) -> SystemMatrices:
        return assemble(self.mesh, density, self.material, self.load.lumped_masses)

    def analyze(self, density) -> Analysis:
        b = np.asarray(density, dtype=float)
        system = self.assemble(b)
        eff = effective_operators(system, self.grid, self.hht)
        load = evaluate_load(self.load, self.mesh, system, self.grid.times)
        traj = hht_solve(system, load, self.grid, self.hht, eff=eff)
        value = objectives.evaluate(self.objective, traj, system)
        partials = objectives.state_partials(self.objective, traj, system)
        return Analysis(b, system, eff, traj, value, partials)

    def objective_value(self, density) -> float:
        return self.analyze(density).value

    def adjoint(self, an: Analysis) -> AdjointTrajectory:
        return solve_adjoint_full(an.system, an.eff, an.partials, self.grid, self.hht)

    def gradient(self, an: Analysis, adjoint=None) -> np.ndarray:
        adj = self.adjoint(an) if adjoint is None else adjoint
        return assemble_gradient(adj, an.traj, an.system, self.objective, self.hht)

    def volume(self, density) -> float:
        """Projected material volume ``sum_e v_e V_bar_e``."""
        vbar, _ = interpolate(density, self.material)
        return float(self.mesh.element_volumes @ vbar)

    @property
    def total_volume(self) -> float:
        return float(self.mesh.element_volumes.sum())

    def fd_gradient(self, density, elements, step: float = 1e-6) -> np.ndarray:
        """Central differences of the fully discrete objective, full re-solve per probe."""
        b = np.asarray(density, dtype=float)
        out = np.zeros(len(elements))
        for k, e in enumerate(elements):
            bp, bm = b.copy(), b.copy()
            bp[e] += step
            bm[e] -= step
            out[k] = (self.objective_value(bp) - self.objective_value(bm)) / (2 * step)
        return out
