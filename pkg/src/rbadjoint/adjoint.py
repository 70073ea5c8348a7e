"""Discrete adjoint of the HHT-alpha recursion and design gradient assembly.

The forward scheme is differentiated as written: one balance residual per
instant in effective form plus the two Newmark update relations. The adjoint
variables are ``vartheta`` (paired with the balance), ``varsigma`` (paired with
the displacement update) and ``tau`` (paired with the velocity update). The
backward sweep is

    varsigma_N = df/dd_N,  tau_N = 0
    M1 vartheta_N = -beta dt^2 varsigma_N - delta dt tau_N
    for i = N, ..., 2:
        varsigma_{i-1} = df/dd_{i-1} + K vartheta_i + varsigma_i
        tau_{i-1}      = C0 vartheta_i + dt varsigma_i + tau_i
        M1 vartheta_{i-1} = -M0 vartheta_i
                            - [beta varsigma_{i-1} + (1/2 - beta) varsigma_i] dt^2
                            - [delta tau_{i-1} + (1 - delta) tau_i] dt
    M vartheta_0 = -M0 vartheta_1 - (1/2 - beta) varsigma_1 dt^2 - (1 - delta) tau_1 dt
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hht import EffectiveOperators, HHTParams, TimeGrid, Trajectory
from .mesh import SystemMatrices, gather_elements
from .objectives import Objective, design_partial_explicit


@dataclass(eq=False)
class AdjointTrajectory:
    vartheta: np.ndarray
    varsigma: np.ndarray
    tau: np.ndarray


def solve_adjoint_full(system: SystemMatrices, eff: EffectiveOperators, partials: np.ndarray,
                       grid: TimeGrid, hht: HHTParams) -> AdjointTrajectory:
    """Backward sweep with the forward pass's factorizations (``N_t + 1`` solves)."""
    N = grid.n_steps
    P = np.asarray(partials)
    if P.shape != (N + 1, system.n_free):
        raise ValueError(f"partials have shape {P.shape}, expected {(N + 1, system.n_free)}")
    beta, delta, dt = hht.beta, hht.delta, grid.dt
    K, M0, C0 = system.K, eff.M0, eff.C0
    th = np.zeros_like(P, dtype=float)
    vs = np.zeros_like(th)
    ta = np.zeros_like(th)

    vs[N] = P[N]
    th[N] = eff.M1_factor.solve(-beta * dt**2 * vs[N] - delta * dt * ta[N])
    for i in range(N, 1, -1):
        vs[i - 1] = P[i - 1] + K @ th[i] + vs[i]
        ta[i - 1] = C0 @ th[i] + dt * vs[i] + ta[i]
        rhs = (-(M0 @ th[i]) - (beta * vs[i - 1] + (0.5 - beta) * vs[i]) * dt**2
               - (delta * ta[i - 1] + (1 - delta) * ta[i]) * dt)
        th[i - 1] = eff.M1_factor.solve(rhs)
    th[0] = eff.M_factor.solve(-(M0 @ th[1]) - (0.5 - beta) * vs[1] * dt**2 - (1 - delta) * ta[1] * dt)
    return AdjointTrajectory(th, vs, ta)


def residual_weights(traj: Trajectory, system: SystemMatrices, hht: HHTParams):
    """Per-instant vectors ``(w_M, w_K)`` with ``dR_i/db_e = dM/db_e w_M,i + dK/db_e w_K,i``.

    Rayleigh damping and mass-proportional loading are folded into the two
    weights; rows are instants ``0..N_t``.
    """
    a = hht.alpha
    mat = system.material
    vb = traj.v.copy()
    db = traj.d.copy()
    vb[1:] = (1 - a) * traj.v[1:] + a * traj.v[:-1]
    db[1:] = (1 - a) * traj.d[1:] + a * traj.d[:-1]
    wM = traj.a + mat.alpha_M * vb
    wK = db + mat.alpha_K * vb
    load = traj.load
    if load is not None and load.design_dependent:
        agb = load.ag.copy()
        agb[1:] = (1 - a) * load.ag[1:] + a * load.ag[:-1]
        wM = wM + np.outer(agb, load.iota)
    return wM, wK


def partial_residual_design(e: int, traj: Trajectory, system: SystemMatrices, hht: HHTParams) -> np.ndarray:
    """Element-local ``dR_i/db_e`` for every instant, shape ``(N_t+1, 8)``."""
    wM, wK = residual_weights(traj, system, hht)
    mesh = system.mesh
    idx = mesh.element_free_dofs[e]
    pad = lambda X: np.concatenate([X, np.zeros((len(X), 1))], axis=1)[:, idx]  # noqa: E731
    return (system.dvbar[e] * pad(wM) @ system.me0 + system.debar[e] * pad(wK) @ system.ke0)


def assemble_gradient(adj, traj: Trajectory, system: SystemMatrices,
                      obj: Objective, hht: HHTParams, chunk: int = 32) -> np.ndarray:
    """``df/db = explicit term + sum_i vartheta_i . dR_i/db``.

    ``adj`` is an :class:`AdjointTrajectory` or an ``(N_t+1, n_free)`` array
    such as a lifted reduced solution.
    """
    th = adj.vartheta if isinstance(adj, AdjointTrajectory) else np.asarray(adj)
    if th.shape != traj.d.shape:
        raise ValueError("adjoint and forward trajectories have different shapes")
    mesh = system.mesh
    wM, wK = residual_weights(traj, system, hht)
    sM = np.zeros(mesh.n_elements)
    sK = np.zeros(mesh.n_elements)
    for s in range(0, len(th), chunk):
        te = gather_elements(mesh, th[s:s + chunk])
        sM += np.einsum("tea,tea->e", te @ system.me0, gather_elements(mesh, wM[s:s + chunk]))
        sK += np.einsum("tea,tea->e", te @ system.ke0, gather_elements(mesh, wK[s:s + chunk]))
    grad = design_partial_explicit(obj, traj, system) + system.dvbar * sM + system.debar * sK
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    return grad
