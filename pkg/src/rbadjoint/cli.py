"""Command-line front end: forward, gradcheck, offline, optimize and report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, build_problem, load_config
from .estimator import ErrorModel, ErrorTrainingSet, GainTable, train_error_model
from .optimize import OfflineArtifacts, harvest_samples, initial_density, optimize
from .rom import ReducedBasis, greedy_offline

log = logging.getLogger("rbadjoint")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad invocation, reported with exit code 2."""


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        if not force:
            raise UsageError(f"output directory {out} exists and is not empty; pass --force to overwrite")
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _default_dofs(problem, cfg: RunConfig) -> list[int]:
    if cfg.output.trajectory_dofs is not None:
        bad = [d for d in cfg.output.trajectory_dofs if not 0 <= d < problem.n_free]
        if bad:
            raise ConfigError(f"output.trajectory_dofs: free dof indices {bad} out of range")
        return list(cfg.output.trajectory_dofs)
    if problem.objective.target_dof is not None:
        return [problem.objective.target_dof]
    nodes = list(problem.load.nodes) + [n for n, _ in problem.load.lumped_masses]
    dofs = [int(problem.mesh.full_to_free[2 * n + k]) for n in nodes for k in (0, 1)]
    return [d for d in dofs if d < problem.n_free] or [0]


def cmd_forward(cfg: RunConfig, out: Path, args) -> int:
    problem = build_problem(cfg)
    b = initial_density(problem, cfg.optimizer.volume_fraction)
    an = problem.analyze(b)
    traj = an.traj
    dofs = _default_dofs(problem, cfg)
    io.write_trajectory_csv(out / "trajectory.csv", traj, dofs)
    K, M = an.system.K, an.system.M
    strain = 0.5 * np.einsum("ij,ij->i", traj.d, (K @ traj.d.T).T)
    kinetic = 0.5 * np.einsum("ij,ij->i", traj.v, (M @ traj.v.T).T)
    summary = {
        "problem": problem.name,
        "n_free": problem.n_free,
        "n_steps": problem.grid.n_steps,
        "objective": an.value,
        "peak_displacement": float(np.max(np.abs(traj.d[:, dofs]))),
        "peak_energy": float(np.max(strain + kinetic)),
        "trajectory_dofs": dofs,
    }
    if not all(np.isfinite(v) for v in (summary["objective"], summary["peak_displacement"])):
        raise FloatingPointError("non-finite forward solution")
    _write_json(out / "summary.json", summary)
    print(f"forward: objective {an.value:.6e}, peak displacement {summary['peak_displacement']:.6e}")
    return EXIT_OK


def relative_errors(adjoint, fd, scale: float, floor: float = 1e-3) -> np.ndarray:
    """``|a - f| / max(|f|, floor * scale)``.

    ``scale`` is the largest gradient magnitude. Central differences carry an
    absolute round-off of order ``eps |f| / h``, so components far below the
    gradient's scale are compared against ``floor * scale`` instead of themselves.
    """
    adjoint, fd = np.asarray(adjoint), np.asarray(fd)
    denom = np.maximum(np.abs(fd), max(floor * scale, np.finfo(float).tiny))
    return np.abs(adjoint - fd) / denom


def cmd_gradcheck(cfg: RunConfig, out: Path, args) -> int:
    g = cfg.gradcheck
    if g.density_low > g.density_high:
        raise ConfigError("gradcheck.density_low: must not exceed density_high")
    problem = build_problem(cfg)
    rng = np.random.default_rng(cfg.seed)
    b = rng.uniform(g.density_low, g.density_high, problem.n_elements)
    probes = np.sort(rng.choice(problem.n_elements, size=min(g.n_probes, problem.n_elements), replace=False))
    an = problem.analyze(b)
    grad = problem.gradient(an)
    fd = problem.fd_gradient(b, probes, step=g.fd_step)
    rel = relative_errors(grad[probes], fd, float(np.max(np.abs(grad))))
    passed = bool(np.all(rel < g.threshold))
    io.write_gradient_csv(out / "gradient.csv", grad)
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "adjoint", "finite_difference", "relative_error"])
        for e, a, f, r in zip(probes, grad[probes], fd, rel):
            w.writerow([int(e), repr(float(a)), repr(float(f)), repr(float(r))])
    _write_json(out / "summary.json", {"max_relative_error": float(rel.max()), "threshold": g.threshold,
                                       "passed": passed, "n_probes": len(probes), "fd_step": g.fd_step})
    print(f"gradcheck: max relative error {rel.max():.3e} -> {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_RUNTIME


def cmd_offline(cfg: RunConfig, out: Path, args) -> int:
    r = cfg.rom
    problem = build_problem(cfg)
    n_samples = args.dh_size or r.n_samples
    t0 = time.perf_counter()
    samples = harvest_samples(problem, cfg.optimizer.to_opt_config(), n_samples, r.harvest_iterations,
                              skip_initial=r.skip_initial, start=r.harvest_start)
    t_harvest = time.perf_counter() - t0
    result = greedy_offline(problem, samples, tol=r.tol, max_basis=r.max_basis, seed=r.seed,
                            enrichment=r.enrichment)
    t_greedy = time.perf_counter() - t0 - t_harvest
    if not result.converged:
        achieved = result.max_errors[-1] if result.max_errors else float("nan")
        print(f"offline: greedy stopped at {result.n_basis} vectors without reaching tol {r.tol:.3e} "
              f"(achieved {achieved:.3e})", file=sys.stderr)
    io.write_rbm1(out / "basis.rbm", result.basis.r, io.basis_metadata(problem))
    with open(out / "greedy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_basis", "max_error", "selected_sample"])
        for k, (e, s) in enumerate(zip(result.max_errors, result.selected), start=1):
            w.writerow([k, repr(e), s])
    table = GainTable()
    best = {}
    for k, gain in result.gains:
        best[k] = max(best.get(k, 0.0), gain)
    for k in sorted(best):
        table.add(samples[k], best[k])
    if table.densities:
        io.write_rbm1(out / "gain_densities.rbm", np.array(table.densities).T)
        _write_json(out / "gains.json", {"gains": table.gains})
    report = {"n_samples": len(samples), "n_basis": result.n_basis, "converged": result.converged,
              "n_pairs": len(result.pairs), "rejected_samples": result.rejected}
    if len(result.pairs) >= 2:
        data = ErrorTrainingSet.from_pairs(result.pairs)
        model, rep = train_error_model(data, hidden=tuple(r.hidden), lr=r.lr, epochs=r.epochs,
                                       holdout_fraction=r.holdout_fraction, seed=r.seed, mode=r.estimator_mode)
        model.save(out / "estimator.json")
        report.update(holdout_rmse=rep.holdout_rmse, holdout_r2=rep.holdout_r2, n_train=rep.n_train,
                      n_holdout=rep.n_holdout, final_loss=rep.losses[-1])
    _write_json(out / "offline_summary.json", report)
    _write_json(out / "offline_timings.json", {"harvest_seconds": t_harvest, "greedy_seconds": t_greedy,
                                               "total_seconds": time.perf_counter() - t0})
    msg = f"offline: {result.n_basis} basis vectors from {len(samples)} samples"
    if "holdout_r2" in report:
        msg += f", estimator holdout RMSE {report['holdout_rmse']:.3e} R2 {report['holdout_r2']:.4f}"
    print(msg)
    return EXIT_OK


def load_offline(path, problem) -> OfflineArtifacts:
    path = Path(path)
    basis_path = path / "basis.rbm"
    if not basis_path.exists():
        raise UsageError(f"offline artifacts not found: {basis_path} is missing")
    r = io.read_rbm1(basis_path)
    meta = io.read_sidecar(basis_path)
    if meta.get("problem_hash") != io.problem_hash(problem):
        raise UsageError(f"offline basis in {path} was built for a different problem")
    model = ErrorModel.load(path / "estimator.json") if (path / "estimator.json").exists() else None
    table = None
    if (path / "gains.json").exists():
        D = io.read_rbm1(path / "gain_densities.rbm")
        gains = json.loads((path / "gains.json").read_text())["gains"]
        table = GainTable([D[:, k] for k in range(D.shape[1])], gains)
    return OfflineArtifacts(ReducedBasis(r), model, table)


def cmd_optimize(cfg: RunConfig, out: Path, args) -> int:
    problem = build_problem(cfg)
    opt = cfg.optimizer.to_opt_config()
    offline = None
    if opt.use_rom:
        offline = load_offline(args.offline, problem)
    history, b = optimize(problem, opt, offline, dump_dir=out)
    io.write_history(out, history)
    io.write_vtk(out / "density.vtk", problem.mesh, b)
    final_volume = problem.volume(b) / problem.total_volume
    final_obj = problem.objective_value(b) if len(history) else float("nan")
    models = history.column("model_used").tolist()
    _write_json(out / "summary.json", {"iterations": len(history), "final_objective": final_obj,
                                       "final_volume": final_volume, "n_full": models.count("full"),
                                       "n_reduced": models.count("reduced")})
    t = history.column("adjoint_seconds")
    m = np.array(models)
    full = float(t[m == "full"].mean()) if np.any(m == "full") else None
    red = float(t[m == "reduced"].mean()) if np.any(m == "reduced") else None
    _write_json(out / "timing_summary.json", {"n_free": problem.n_free, "mean_full_seconds": full,
                                              "mean_reduced_seconds": red,
                                              "speedup": full / red if full and red else None})
    print(f"optimize: {len(history)} iterations, objective {final_obj:.6e}, volume {final_volume:.6f}, "
          f"{models.count('reduced')} reduced adjoints")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import build_report

    runs = args.runs
    if not runs:
        raise UsageError("report needs at least one artifact directory")
    out = _prepare_out(args.out, args.force)
    written = build_report(runs, out)
    print("report: " + ", ".join(p.name for p in written))
    return EXIT_OK


COMMANDS = {"forward": cmd_forward, "gradcheck": cmd_gradcheck, "offline": cmd_offline, "optimize": cmd_optimize}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbadjoint", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("forward", "gradcheck", "offline", "optimize", "report"):
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        if name == "report":
            p.add_argument("runs", nargs="*", help="artifact directories to summarize")
            continue
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        if name == "offline":
            p.add_argument("--dh-size", type=int, help="number of density samples (e.g. 200)")
        if name == "optimize":
            p.add_argument("--offline", help="directory written by the offline command")
    return parser


def _apply_seed(cfg: RunConfig, seed) -> RunConfig:
    if seed is None:
        return cfg
    if seed < 0:
        raise ConfigError("--seed must be non-negative")
    return cfg.model_copy(update={"seed": seed, "rom": cfg.rom.model_copy(update={"seed": seed})})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = _apply_seed(load_config(args.config), args.seed)
        if args.command == "offline" and args.dh_size is not None and args.dh_size < 1:
            raise ConfigError("--dh-size must be positive")
        if args.command == "optimize" and cfg.optimizer.use_rom and not args.offline:
            raise UsageError("optimizer.use_rom is set but no --offline artifact directory was given")
        out = _prepare_out(args.out, args.force)
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
