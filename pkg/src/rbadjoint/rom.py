"""Reduced basis approximation of the adjoint sweep.

The adjoint ``vartheta_i`` is approximated as ``r a_i`` with an orthonormal
basis ``r``. Operators are Galerkin-projected, the backward recursion is run on
the generalized coordinates ``a`` and the result is lifted back to the full
space. Residuals of the lifted solution in the full-order recursion drive the
error estimators.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .adjoint import solve_adjoint_full
from .estimator import gain_from_pair, true_error_norms
from .hht import EffectiveOperators, HHTParams, TimeGrid
from .mesh import SystemMatrices

log = logging.getLogger(__name__)


@dataclass(eq=False)
class ReducedBasis:
    r: np.ndarray
    rank_deficient: bool = False

    @property
    def n(self) -> int:
        return self.r.shape[1]

    @classmethod
    def empty(cls, n_free: int) -> "ReducedBasis":
        return cls(np.zeros((n_free, 0)))

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.r.T @ self.r - np.eye(self.n)), initial=0.0))

    def enrich(self, vector: np.ndarray, reject_tol: float = 1e-10) -> bool:
        """Append ``vector`` after two passes of modified Gram-Schmidt.

        Returns False, leaving the basis unchanged, when the component
        orthogonal to the current span has norm below ``reject_tol`` times the
        original norm.
        """
        w = np.array(vector, dtype=float)
        norm0 = np.linalg.norm(w)
        if norm0 == 0.0:
            return False
        for _ in range(2):
            for k in range(self.n):
                w -= (self.r[:, k] @ w) * self.r[:, k]
        nw = np.linalg.norm(w)
        if nw < reject_tol * norm0:
            return False
        self.r = np.column_stack([self.r, w / nw])
        return True

    def truncated(self, n: int) -> "ReducedBasis":
        return ReducedBasis(self.r[:, :n].copy())


def pod(snapshots: np.ndarray, n_basis: int) -> ReducedBasis:
    """Leading ``n_basis`` left singular vectors of the column snapshot matrix."""
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2:
        raise ValueError("snapshots must be a 2-D array")
    if n_basis < 1 or n_basis > min(S.shape):
        raise ValueError(f"n_basis must lie in [1, {min(S.shape)}], got {n_basis}")
    if not np.any(S):
        raise ValueError("snapshot matrix is identically zero")
    if not np.all(np.isfinite(S)):
        raise ValueError("snapshot matrix has non-finite entries")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(S.shape) * np.finfo(float).eps))
    deficient = n_basis > rank
    if deficient:
        warnings.warn(f"requested {n_basis} modes but snapshot rank is {rank}; "
                      "trailing vectors span the null singular space", stacklevel=2)
    return ReducedBasis(U[:, :n_basis].copy(), rank_deficient=deficient)


def singular_values(snapshots: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(snapshots, dtype=float), compute_uv=False)


@dataclass(eq=False)
class ReducedOperators:
    M1r: np.ndarray
    M0r: np.ndarray
    Mr: np.ndarray
    Kr: np.ndarray  # K r, n_free x N_r
    C0r: np.ndarray  # C0 r, n_free x N_r
    r: np.ndarray
    M1r_factor: tuple = field(repr=False, default=None)
    Mr_factor: tuple = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.M1r.shape[0]


def project_operators(system: SystemMatrices, eff: EffectiveOperators, basis: ReducedBasis) -> ReducedOperators:
    r = basis.r
    if r.shape[0] != system.n_free:
        raise ValueError("basis length does not match the system")
    M1r = r.T @ (eff.M1 @ r)
    M0r = r.T @ (eff.M0 @ r)
    Mr = r.T @ (system.M @ r)
    Kr = np.asarray(system.K @ r)
    C0r = np.asarray(eff.C0 @ r)
    sym = lambda A: 0.5 * (A + A.T)  # noqa: E731
    M1r, M0r, Mr = sym(M1r), sym(M0r), sym(Mr)
    try:
        f1 = la.cho_factor(M1r)
        fm = la.cho_factor(Mr)
    except la.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"reduced operator is singular: {exc}") from exc
    return ReducedOperators(M1r, M0r, Mr, Kr, C0r, r, f1, fm)


@dataclass(eq=False)
class ReducedAdjoint:
    coords: np.ndarray  # (N_t+1, N_r)
    lifted: np.ndarray  # (N_t+1, n_free)


def lift(basis_r: np.ndarray, coords: np.ndarray) -> np.ndarray:
    return np.asarray(coords) @ basis_r.T


def solve_adjoint_reduced(red: ReducedOperators, partials: np.ndarray, grid: TimeGrid,
                          hht: HHTParams, literal: bool = False) -> ReducedAdjoint:
    """Backward sweep on generalized coordinates, lifted to the full space.

    With ``literal=True`` the running ``varsigma`` and ``tau`` vectors are kept
    in the full space and projected every step. Otherwise only their
    projections ``r^T varsigma`` and ``r^T tau`` are propagated, which gives
    the same coordinates with all per-step work of size ``N_r``.
    """
    N = grid.n_steps
    P = np.asarray(partials, dtype=float)
    r = red.r
    if P.shape != (N + 1, r.shape[0]):
        raise ValueError(f"partials have shape {P.shape}, expected {(N + 1, r.shape[0])}")
    beta, delta, dt = hht.beta, hht.delta, grid.dt
    nr = red.dim
    a = np.zeros((N + 1, nr))
    solve1 = lambda rhs: la.cho_solve(red.M1r_factor, rhs)  # noqa: E731

    if literal:
        proj = lambda x: r.T @ x  # noqa: E731
        Kop, Cop = red.Kr, red.C0r
    else:
        proj = lambda x: x  # noqa: E731
        Kop = r.T @ red.Kr
        Cop = r.T @ red.C0r
        P = P @ r
    vs = P[N].copy()
    ta = np.zeros_like(vs)
    a[N] = solve1(proj(-beta * dt**2 * vs - delta * dt * ta))
    for i in range(N, 1, -1):
        vs_prev = P[i - 1] + Kop @ a[i] + vs
        ta_prev = Cop @ a[i] + dt * vs + ta
        rhs = (-(red.M0r @ a[i]) - proj((beta * vs_prev + (0.5 - beta) * vs) * dt**2
                                       + (delta * ta_prev + (1 - delta) * ta) * dt))
        a[i - 1] = solve1(rhs)
        vs, ta = vs_prev, ta_prev
    rhs0 = -(red.M0r @ a[1]) - proj((0.5 - beta) * vs * dt**2 + (1 - delta) * ta * dt)
    a[0] = la.cho_solve(red.Mr_factor, rhs0)
    return ReducedAdjoint(a, lift(r, a))


@dataclass(eq=False)
class ResidualHistory:
    vectors: np.ndarray  # (N_t+1, n_free), row k is the defect of the equation solved for unknown k
    norms: np.ndarray


def compute_residuals(system: SystemMatrices, eff: EffectiveOperators, S: np.ndarray,
                      partials: np.ndarray, grid: TimeGrid, hht: HHTParams,
                      keep_vectors: bool = True) -> ResidualHistory:
    """Defect of the full-order adjoint recursion evaluated at the lifted ``S``."""
    N = grid.n_steps
    S = np.asarray(S, dtype=float)
    P = np.asarray(partials, dtype=float)
    beta, delta, dt = hht.beta, hht.delta, grid.dt
    KS = (system.K @ S.T).T
    CS = (eff.C0 @ S.T).T
    vs = np.zeros_like(S)
    ta = np.zeros_like(S)
    vs[N] = P[N]
    for j in range(N - 1, 0, -1):
        vs[j] = P[j] + KS[j + 1] + vs[j + 1]
        ta[j] = CS[j + 1] + dt * vs[j + 1] + ta[j + 1]
    R = (eff.M1 @ S.T).T
    R[0] = system.M @ S[0]
    R[:N] += (eff.M0 @ S[1:].T).T
    R[N] += beta * dt**2 * vs[N] + delta * dt * ta[N]
    R[1:N] += (beta * vs[1:N] + (0.5 - beta) * vs[2:N + 1]) * dt**2
    R[1:N] += (delta * ta[1:N] + (1 - delta) * ta[2:N + 1]) * dt
    R[0] += (0.5 - beta) * vs[1] * dt**2 + (1 - delta) * ta[1] * dt
    norms = np.linalg.norm(R, axis=1)
    return ResidualHistory(R if keep_vectors else None, norms)


@dataclass(eq=False)
class _Sample:
    density: np.ndarray
    system: SystemMatrices
    eff: EffectiveOperators
    partials: np.ndarray
    full: np.ndarray | None = None


@dataclass(eq=False)
class GreedyResult:
    basis: ReducedBasis
    max_errors: list = field(default_factory=list)  # after each enrichment
    selected: list = field(default_factory=list)
    pairs: list = field(default_factory=list)  # (residual norms, true error norms)
    gains: list = field(default_factory=list)  # (sample index, gain) from true evaluations
    converged: bool = False
    rejected: list = field(default_factory=list)

    @property
    def n_basis(self) -> int:
        return self.basis.n


def greedy_offline(problem, samples, tol: float = 0.0, max_basis: int = 20,
                   error_oracle: str = "true", error_model=None, seed: int = 0,
                   enrichment: str = "projection_error", literal: bool = False) -> GreedyResult:
    """POD-greedy construction of the adjoint basis over the density samples.

    Each sweep adds one vector: the first POD mode of the worst sample's
    projection error onto the current basis (``enrichment="projection_error"``,
    the default) or of its raw full adjoint snapshot (``"snapshot"``),
    orthonormalized against the current basis. The sample error is the sum over instants of the error
    norms, either computed against the full adjoint (``error_oracle="true"``)
    or predicted from residual norms by ``error_model``. Every true evaluation
    is recorded in ``pairs`` for training an error model.
    """
    if error_oracle not in ("true", "estimated"):
        raise ValueError(f"unknown error oracle {error_oracle!r}")
    if error_oracle == "estimated" and error_model is None:
        raise ValueError("estimated error oracle needs a trained error model")
    if enrichment not in ("snapshot", "projection_error"):
        raise ValueError(f"unknown enrichment {enrichment!r}")
    samples = [np.asarray(b, dtype=float) for b in samples]
    if not samples:
        raise ValueError("sample set is empty")

    grid, hht = problem.grid, problem.hht
    cache = []
    for b in samples:
        an = problem.analyze(b)
        cache.append(_Sample(b, an.system, an.eff, an.partials))

    def full_adjoint(k):
        if cache[k].full is None:
            c = cache[k]
            c.full = solve_adjoint_full(c.system, c.eff, c.partials, grid, hht).vartheta
        return cache[k].full

    rng = np.random.default_rng(seed)
    result = GreedyResult(ReducedBasis.empty(problem.n_free))
    exhausted = set()
    current = int(rng.integers(len(samples)))
    errors = None
    while True:
        snap = full_adjoint(current).T  # n_free x (N_t+1)
        if enrichment == "projection_error" and result.basis.n:
            r = result.basis.r
            snap = snap - r @ (r.T @ snap)
        added = np.any(snap) and result.basis.enrich(pod(snap, 1).r[:, 0])
        if not added:
            exhausted.add(current)
            result.rejected.append(current)
            log.info("sample %d already spanned by the basis", current)
        else:
            result.selected.append(current)
            errors = np.zeros(len(samples))
            for k, c in enumerate(cache):
                red = project_operators(c.system, c.eff, result.basis)
                S = solve_adjoint_reduced(red, c.partials, grid, hht, literal=literal).lifted
                if error_oracle == "true":
                    e = true_error_norms(full_adjoint(k), S)
                    res = compute_residuals(c.system, c.eff, S, c.partials, grid, hht, keep_vectors=False)
                    result.pairs.append((res.norms, e))
                    result.gains.append((k, gain_from_pair(res.norms, e)))
                else:
                    res = compute_residuals(c.system, c.eff, S, c.partials, grid, hht, keep_vectors=False)
                    e = error_model.predict(res.norms)
                errors[k] = float(np.sum(e))
            result.max_errors.append(float(errors.max()))
            log.info("greedy: %d basis vectors, max error %.3e", result.basis.n, errors.max())
            if errors.max() <= tol:
                result.converged = True
                break
            if result.basis.n >= max_basis:
                break
        order = [k for k in np.argsort(-errors, kind="stable") if k not in exhausted] if errors is not None else []
        if not order:
            log.warning("greedy stopped: every remaining sample is spanned")
            break
        current = int(order[0])
    if not result.converged:
        log.warning("greedy did not reach tol %.3e with %d basis vectors (max error %.3e)",
                    tol, result.basis.n, result.max_errors[-1] if result.max_errors else float("nan"))
    return result
