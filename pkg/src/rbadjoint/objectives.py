"""Time-averaged objectives and their state and explicit design partials.

All three kinds sum over every stored instant ``0..N_t`` and divide by
``N_t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hht import Trajectory
from .mesh import SystemMatrices, gather_elements

OBJECTIVE_KINDS = ("mean_dynamic_compliance", "mean_strain_energy", "squared_target_displacement")


@dataclass(frozen=True)
class Objective:
    kind: str
    target_dof: int | None = None  # free-dof index, for squared_target_displacement

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "squared_target_displacement" and self.target_dof is None:
            raise ValueError("squared_target_displacement needs a target dof")

    def selection(self, n_free: int) -> np.ndarray:
        L = np.zeros(n_free)
        L[self.target_dof] = 1.0
        return L


def evaluate(obj: Objective, traj: Trajectory, system: SystemMatrices) -> float:
    nt = traj.n_steps
    if traj.d.shape[1] != system.n_free:
        raise ValueError("trajectory does not match the system dimension")
    if obj.kind == "mean_dynamic_compliance":
        return float(np.einsum("ij,ij->", traj.f, traj.d)) / nt
    if obj.kind == "mean_strain_energy":
        Kd = (system.K @ traj.d.T).T
        return float(np.einsum("ij,ij->", traj.d, Kd)) / (2 * nt)
    return float(np.sum(traj.d[:, obj.target_dof] ** 2)) / nt


def state_partials(obj: Objective, traj: Trajectory, system: SystemMatrices) -> np.ndarray:
    """``df/dd_i`` for every instant, shape ``(N_t+1, n_free)``."""
    nt = traj.n_steps
    if obj.kind == "mean_dynamic_compliance":
        return traj.f / nt
    if obj.kind == "mean_strain_energy":
        return (system.K @ traj.d.T).T / nt
    out = np.zeros_like(traj.d)
    out[:, obj.target_dof] = 2.0 * traj.d[:, obj.target_dof] / nt
    return out


def design_partial_explicit(obj: Objective, traj: Trajectory, system: SystemMatrices) -> np.ndarray:
    """Partial derivative of the objective in the element densities at frozen state."""
    mesh = system.mesh
    grad = np.zeros(mesh.n_elements)
    nt = traj.n_steps
    if obj.kind == "mean_strain_energy":
        for de in _chunks(traj.d, mesh):
            grad += np.einsum("tea,ab,teb->e", de, system.ke0, de)
        return grad * system.debar / (2 * nt)
    if obj.kind == "mean_dynamic_compliance" and traj.load is not None and traj.load.design_dependent:
        # f_i = -M iota ag_i, so df_i/db_e . d_i = -ag_i dVbar_e (M_e iota_e) . d_e
        mi = system.me0 @ gather_elements(mesh, traj.load.iota).T  # (8, n_el)
        for start, de in _chunks(traj.d, mesh, with_offset=True):
            ag = traj.load.ag[start:start + len(de)]
            grad -= np.einsum("t,tea,ae->e", ag, de, mi)
        return grad * system.dvbar / nt
    return grad


def _chunks(X, mesh, size: int = 32, with_offset: bool = False):
    for start in range(0, len(X), size):
        block = gather_elements(mesh, X[start:start + size])
        yield (start, block) if with_offset else block
