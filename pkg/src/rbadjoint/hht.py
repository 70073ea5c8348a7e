"""HHT-alpha direct time integration of ``M a + C v + K d = f``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import LoadHistory, SystemMatrices


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int
    dt: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("need at least one time step")
        if not self.dt > 0:
            raise ValueError("time step must be positive")

    @classmethod
    def from_total(cls, n_steps: int, total_time: float) -> "TimeGrid":
        return cls(int(n_steps), total_time / n_steps)

    @property
    def total_time(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class HHTParams:
    alpha: float
    beta: float
    delta: float

    @classmethod
    def from_alpha(cls, alpha: float = 0.05) -> "HHTParams":
        if not 0.0 <= alpha <= 1.0 / 3.0:
            raise ValueError(f"alpha must lie in [0, 1/3], got {alpha}")
        return cls(alpha, (1 + alpha) ** 2 / 4, (1 + 2 * alpha) / 2)


class Factorized:
    """Sparse LU of a constant matrix with a solve counter."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        try:
            self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"singular matrix: {exc}") from exc
        self.n_solves = 0
        self.shape = A.shape

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        self.n_solves += 1
        x = self._lu.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("non-finite solution; matrix is singular")
        return x


@dataclass(eq=False)
class EffectiveOperators:
    M1: sp.csc_matrix
    M0: sp.csc_matrix
    C0: sp.csc_matrix
    M1_factor: Factorized
    M_factor: Factorized
    grid: TimeGrid
    hht: HHTParams


def effective_operators(system: SystemMatrices, grid: TimeGrid, hht: HHTParams) -> EffectiveOperators:
    a, b, d, dt = hht.alpha, hht.beta, hht.delta, grid.dt
    M, C, K = system.M, system.C, system.K
    M1 = (M + (1 - a) * d * dt * C + (1 - a) * b * dt**2 * K).tocsc()
    M0 = ((1 - a) * (1 - d) * dt * C + (1 - a) * (0.5 - b) * dt**2 * K).tocsc()
    C0 = (C + (1 - a) * dt * K).tocsc()
    return EffectiveOperators(M1, M0, C0, Factorized(M1), Factorized(M), grid, hht)


def initial_acceleration(system: SystemMatrices, f0, d0, v0, M_factor: Factorized | None = None):
    factor = M_factor or Factorized(system.M)
    return factor.solve(f0 - system.C @ v0 - system.K @ d0)


@dataclass(eq=False)
class Trajectory:
    """State history; rows are time instants ``0..n_steps``."""

    d: np.ndarray
    v: np.ndarray
    a: np.ndarray
    f: np.ndarray
    grid: TimeGrid
    load: LoadHistory | None = None

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps


def hht_solve(system: SystemMatrices, forces, grid: TimeGrid, hht: HHTParams,
              d0=None, v0=None, eff: EffectiveOperators | None = None) -> Trajectory:
    """Integrate with one solve of the constant effective matrix per step.

    ``forces`` is a :class:`LoadHistory` or an ``(n_steps+1, n)`` array.
    """
    load = forces if isinstance(forces, LoadHistory) else None
    f = np.asarray(load.forces if load is not None else forces, dtype=float)
    n = system.n_free
    if f.shape != (grid.n_steps + 1, n):
        raise ValueError(f"forces have shape {f.shape}, expected {(grid.n_steps + 1, n)}")
    eff = eff or effective_operators(system, grid, hht)
    alpha, beta, delta, dt = hht.alpha, hht.beta, hht.delta, grid.dt

    d = np.zeros((grid.n_steps + 1, n))
    v = np.zeros_like(d)
    acc = np.zeros_like(d)
    if d0 is not None:
        d[0] = d0
    if v0 is not None:
        v[0] = v0
    acc[0] = initial_acceleration(system, f[0], d[0], v[0], eff.M_factor)
    K, M0, C0 = system.K, eff.M0, eff.C0
    for i in range(1, grid.n_steps + 1):
        rhs = (1 - alpha) * f[i] + alpha * f[i - 1] - M0 @ acc[i - 1] - C0 @ v[i - 1] - K @ d[i - 1]
        acc[i] = eff.M1_factor.solve(rhs)
        v[i] = v[i - 1] + ((1 - delta) * acc[i - 1] + delta * acc[i]) * dt
        d[i] = d[i - 1] + v[i - 1] * dt + ((0.5 - beta) * acc[i - 1] + beta * acc[i]) * dt**2
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(acc))):
        raise FloatingPointError("non-finite state in time integration")
    return Trajectory(d, v, acc, f, grid, load)


def balance_residuals(system: SystemMatrices, traj: Trajectory, hht: HHTParams) -> np.ndarray:
    """Relative defect of the alpha-modified balance at each step ``1..n_steps``."""
    a = hht.alpha
    M, C, K = system.M, system.C, system.K
    out = np.zeros(traj.n_steps)
    for i in range(1, traj.n_steps + 1):
        lhs = (M @ traj.a[i] + (1 - a) * (C @ traj.v[i] + K @ traj.d[i])
               + a * (C @ traj.v[i - 1] + K @ traj.d[i - 1]))
        rhs = (1 - a) * traj.f[i] + a * traj.f[i - 1]
        scale = np.linalg.norm(M @ traj.a[i]) + np.linalg.norm(K @ traj.d[i]) + np.linalg.norm(rhs) + 1e-300
        out[i - 1] = np.linalg.norm(lhs - rhs) / scale
    return out
