"""Outer topology-optimization loop with adaptive full/reduced adjoint selection."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .adjoint import assemble_gradient
from .estimator import gain_baseline_estimate
from .material import DensityFilter, interpolate
from .rom import ReducedBasis, compute_residuals, project_operators, solve_adjoint_reduced

log = logging.getLogger(__name__)


@dataclass
class OptConfig:
    volume_fraction: float = 0.5
    max_iterations: int = 60
    move_limit: float = 0.2
    tol: float = 1e-3
    eps1: float = 0.1
    eps2: float = 0.005
    use_rom: bool = False
    rom_dimension: int | None = None  # truncate the offline basis; None keeps all vectors
    estimator: str = "none"  # none | fnn | gain_baseline | true
    filter_radius: float | None = None

    def __post_init__(self):
        if not 0.0 < self.volume_fraction < 1.0:
            raise ValueError("volume fraction must lie in (0, 1)")
        if not 0.0 < self.eps1 < 1.0:
            raise ValueError("eps1 must lie in (0, 1)")
        if not 0.0 <= self.eps2 < 1.0:
            raise ValueError("eps2 must lie in [0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if not 0.0 < self.move_limit <= 1.0:
            raise ValueError("move limit must lie in (0, 1]")
        if self.estimator not in ("none", "fnn", "gain_baseline", "true"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    volume: float
    model_used: str
    adjoint_seconds: float
    max_change: float
    gradient_norm: float
    n_changed: int
    estimated_error: float = float("nan")


@dataclass
class OptHistory:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


@dataclass(eq=False)
class OfflineArtifacts:
    basis: ReducedBasis
    error_model: object | None = None
    gain_table: object | None = None


def count_changed(b_k, b_prev, eps1: float) -> int:
    b_k = np.asarray(b_k)
    b_prev = np.asarray(b_prev)
    if b_k.shape != b_prev.shape:
        raise ValueError("designs have different lengths")
    return int(np.count_nonzero(np.abs(b_k - b_prev) >= eps1))


def adaptive_model_select(b_k, b_prev, eps1: float, eps2: float) -> str:
    """``reduced`` when at most ``n * eps2`` densities moved by ``eps1`` or more."""
    if b_prev is None:
        return "full"
    n = len(b_k)
    return "reduced" if count_changed(b_k, b_prev, eps1) <= n * eps2 else "full"


@dataclass
class MMAState:
    x1: np.ndarray | None = None
    x2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None


def _asymptotes(b, state: MMAState, init=0.5, decr=0.7, incr=1.2):
    if state.x2 is None or state.low is None:
        return b - init, b + init
    osc = (b - state.x1) * (state.x1 - state.x2)
    gamma = np.where(osc < 0, decr, np.where(osc > 0, incr, 1.0))
    low = b - gamma * (state.x1 - state.low)
    upp = b + gamma * (state.upp - state.x1)
    low = np.clip(low, b - 10.0, b - 0.01)
    upp = np.clip(upp, b + 0.01, b + 10.0)
    return low, upp


def update_density(b, gradient, volume_gradient, config: OptConfig, constraint=None,
                   state: MMAState | None = None, max_bisect: int = 200) -> np.ndarray:
    """One MMA-style step for a single volume constraint.

    ``gradient`` is the (scaled) objective gradient, ``volume_gradient`` the
    gradient of the constraint ``g``. ``constraint(x)`` evaluates ``g``; when
    omitted its linearization at ``b`` is used with ``g(b) = 0``. The dual
    variable is found by bisection on the true constraint value.
    """
    b = np.asarray(b, dtype=float)
    g0 = np.asarray(gradient, dtype=float)
    vg = np.asarray(volume_gradient, dtype=float)
    if not (np.all(np.isfinite(g0)) and np.all(np.isfinite(vg))):
        raise ValueError("non-finite gradient")
    state = state or MMAState()
    if constraint is None:
        constraint = lambda x: float(vg @ (x - b))  # noqa: E731
    low, upp = _asymptotes(b, state)
    lo = np.maximum.reduce([np.zeros_like(b), b - config.move_limit, low + 0.1 * (b - low)])
    hi = np.minimum.reduce([np.ones_like(b), b + config.move_limit, upp - 0.1 * (upp - b)])
    reg = 1e-5
    gp, gm = np.maximum(g0, 0.0), np.maximum(-g0, 0.0)
    p = (upp - b) ** 2 * (1.001 * gp + 0.001 * gm + reg)
    q = (b - low) ** 2 * (0.001 * gp + 1.001 * gm + reg)
    pc = (upp - b) ** 2 * np.maximum(vg, 0.0)
    qc = (b - low) ** 2 * np.maximum(-vg, 0.0)

    def x_of(lam):
        sp_, sq_ = np.sqrt(p + lam * pc), np.sqrt(q + lam * qc)
        return np.clip((sp_ * low + sq_ * upp) / (sp_ + sq_), lo, hi)

    x = x_of(0.0)
    if constraint(x) > 0.0:
        lam_lo, lam_hi = 0.0, 1.0
        while constraint(x_of(lam_hi)) > 0.0:
            lam_hi *= 10.0
            if lam_hi > 1e30:
                log.warning("volume constraint unreachable within move limits")
                x = x_of(lam_hi)
                break
        else:
            for _ in range(max_bisect):
                lam = 0.5 * (lam_lo + lam_hi)
                x = x_of(lam)
                gv = constraint(x)
                if gv > 0.0:
                    lam_lo = lam
                else:
                    lam_hi = lam
                    if gv > -1e-9:
                        break
            else:
                raise RuntimeError("dual bisection did not converge in %d iterations" % max_bisect)
            x = x_of(lam_hi)
    state.x2, state.x1 = state.x1, b.copy()
    state.low, state.upp = low, upp
    return x


def initial_density(problem, volume_fraction: float) -> np.ndarray:
    """Uniform design whose projected volume equals the target fraction."""
    mat = problem.material
    f = lambda s: float(interpolate(np.array([s]), mat)[0][0]) - volume_fraction  # noqa: E731
    s = brentq(f, 0.0, 1.0, xtol=1e-14) if f(0.0) < 0.0 < f(1.0) else volume_fraction
    return np.full(problem.n_elements, s)


def optimize(problem, config: OptConfig, offline: OfflineArtifacts | None = None,
             initial=None, callback=None, dump_dir=None):
    """Run the density optimization; returns ``(history, final density)``.

    The forward problem is always full order. When ``config.use_rom`` is set,
    each adjoint is solved reduced or full according to the change-count rule,
    timing includes the operator projection for the reduced branch.
    """
    if config.use_rom and (offline is None or offline.basis is None or offline.basis.n == 0):
        raise ValueError("reduced adjoint requested but no offline basis was supplied")
    basis = None
    if config.use_rom:
        basis = offline.basis
        if config.rom_dimension is not None:
            basis = basis.truncated(min(config.rom_dimension, basis.n))
    filt = None
    if config.filter_radius:
        filt = DensityFilter(problem.mesh.centroids, config.filter_radius)
    b = initial_density(problem, config.volume_fraction) if initial is None else np.array(initial, float)
    history = OptHistory()
    total = problem.total_volume
    vol_of = lambda x: problem.volume(filt.forward(x) if filt else x) / total  # noqa: E731
    state = MMAState()
    prev = None
    f0 = None
    for k in range(config.max_iterations):
        phys = filt.forward(b) if filt else b
        an = problem.analyze(phys)
        if not np.isfinite(an.value):
            if dump_dir is not None:
                np.save(f"{dump_dir}/nonfinite_iterate.npy", b)
            raise FloatingPointError(f"non-finite objective at iteration {k}")
        f0 = f0 or (abs(an.value) or 1.0)
        model = "full" if not config.use_rom else adaptive_model_select(b, prev, config.eps1, config.eps2)
        est = float("nan")
        t0 = time.perf_counter()
        if model == "full":
            theta = problem.adjoint(an).vartheta
            t_adj = time.perf_counter() - t0
        else:
            red = project_operators(an.system, an.eff, basis)
            theta = solve_adjoint_reduced(red, an.partials, problem.grid, problem.hht).lifted
            t_adj = time.perf_counter() - t0
            est = _estimate(problem, an, theta, config, offline, phys)
        grad = assemble_gradient(theta, an.traj, an.system, problem.objective, problem.hht)
        vgrad = problem.mesh.element_volumes * an.system.dvbar / total
        if filt:
            grad, vgrad = filt.backward(grad), filt.backward(vgrad)
        b_new = update_density(b, grad / f0, vgrad, config,
                               constraint=lambda x: vol_of(x) - config.volume_fraction, state=state)
        change = float(np.max(np.abs(b_new - b)))
        rec = IterationRecord(k, an.value, vol_of(b), model, t_adj, change, float(np.linalg.norm(grad)),
                              count_changed(b, prev, config.eps1) if prev is not None else len(b), est)
        history.records.append(rec)
        log.info("it %3d  f=%.6e  vol=%.4f  %-7s  adj=%.3fs  change=%.3f", k, an.value, rec.volume,
                 model, t_adj, change)
        if callback is not None:
            callback(rec, b)
        prev, b = b, b_new
        if change < config.tol:
            break
    return history, b


def _estimate(problem, an, theta, config, offline, phys) -> float:
    if config.estimator == "none":
        return float("nan")
    if config.estimator == "true":
        full = problem.adjoint(an).vartheta
        return float(np.linalg.norm(full - theta, axis=1).sum())
    res = compute_residuals(an.system, an.eff, theta, an.partials, problem.grid, problem.hht, keep_vectors=False)
    if config.estimator == "fnn" and offline.error_model is not None:
        return float(offline.error_model.predict(res.norms).sum())
    if config.estimator == "gain_baseline" and offline.gain_table is not None:
        return float(gain_baseline_estimate(offline.gain_table, phys, res.norms).sum())
    return float("nan")


def harvest_samples(problem, config: OptConfig, n_samples: int, n_iterations: int,
                    skip_initial: int = 5, start: str = "trigger") -> list:
    """Densities from a short full-order run, sub-sampled evenly to ``n_samples``.

    The first ``skip_initial`` iterates are dropped: the reduced adjoint is only
    used once designs settle, and the uniform start is far from that regime.
    With ``start="trigger"`` the run is also cut before the first iterate the
    change-count rule would route to the reduced adjoint, since basis and
    estimator are only queried from there on. That cut never leaves fewer than
    ``n_samples`` iterates. ``start="skip"`` applies ``skip_initial`` alone.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if start not in ("skip", "trigger"):
        raise ValueError(f"unknown harvest start {start!r}")
    iterates = []
    cfg = OptConfig(**{**config.__dict__, "use_rom": False, "max_iterations": n_iterations, "tol": 0.0})
    _, final = optimize(problem, cfg, callback=lambda rec, b: iterates.append(b.copy()))
    iterates.append(final)
    cut = skip_initial
    if start == "trigger":
        first = next((k for k in range(1, len(iterates))
                      if adaptive_model_select(iterates[k], iterates[k - 1], config.eps1, config.eps2) == "reduced"),
                     len(iterates))
        cut = max(cut, min(first, len(iterates) - n_samples))
    iterates = iterates[min(cut, len(iterates) - 1):]
    if n_samples >= len(iterates):
        return iterates
    idx = np.unique(np.round(np.linspace(0, len(iterates) - 1, n_samples)).astype(int))
    return [iterates[i] for i in idx]
