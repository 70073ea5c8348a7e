"""SVG plots and CSV tables summarizing offline and optimization artifacts."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

log = logging.getLogger(__name__)

# fixed metadata keeps SVG output byte-stable between runs
_SVG_META = {"Date": None, "Creator": None}
plt.rcParams["svg.hashsalt"] = "rbadjoint"


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def _message_figure(path: Path, title: str, message: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.set_title(title)
    ax.text(0.5, 0.5, message, ha="center", va="center", transform=ax.transAxes)
    ax.set_axis_off()
    return _save(fig, path)


def plot_greedy(rows: list[dict], path) -> Path:
    """Maximum sample error against the number of basis vectors."""
    path = Path(path)
    if not rows:
        return _message_figure(path, "Greedy error", "no greedy iterations recorded")
    n = [int(r["n_basis"]) for r in rows]
    err = [float(r["max_error"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(n, err, marker="o")
    if all(e > 0 for e in err):
        ax.set_yscale("log")
    ax.set_xlabel("basis vectors")
    ax.set_ylabel("max summed error")
    ax.set_title("Greedy error")
    fig.tight_layout()
    return _save(fig, path)


def plot_adjoint_times(rows: list[dict], path) -> Path:
    """Per-iteration adjoint wall time, one marker colour per model."""
    path = Path(path)
    if not rows:
        return _message_figure(path, "Adjoint time", "history is empty: no iterations were run")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for model, colour in (("full", "tab:blue"), ("reduced", "tab:orange")):
        pts = [(int(r["iteration"]), float(r["adjoint_seconds"])) for r in rows if r["model_used"] == model]
        if pts:
            it, t = zip(*pts)
            ax.plot(it, t, linestyle="none", marker="o", color=colour, label=model)
    ax.set_xlabel("iteration")
    ax.set_ylabel("adjoint seconds")
    ax.set_title("Adjoint time")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def speedup_table(summaries: list[dict]) -> list[dict]:
    """Rows of (run, n_free, speedup) sorted by ascending dof count."""
    rows = [
        {"run": s["run"], "n_free": int(s["n_free"]), "speedup": float(s["speedup"])}
        for s in summaries
        if s.get("speedup") is not None
    ]
    return sorted(rows, key=lambda r: (r["n_free"], r["run"]))


def plot_speedup(rows: list[dict], path) -> Path:
    path = Path(path)
    if not rows:
        return _message_figure(path, "Adjoint speedup", "no run used both adjoint models")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["n_free"] for r in rows], [r["speedup"] for r in rows], marker="o")
    ax.set_xlabel("free dofs")
    ax.set_ylabel("full / reduced adjoint time")
    ax.set_title("Adjoint speedup")
    fig.tight_layout()
    return _save(fig, path)


def build_report(run_dirs, out_dir) -> list[Path]:
    """Render every plot whose inputs exist in ``run_dirs``; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    summaries = []
    for run in map(Path, run_dirs):
        if not run.is_dir():
            raise FileNotFoundError(f"artifact directory {run} does not exist")
        name = run.name
        if (run / "greedy.csv").exists():
            written.append(plot_greedy(_read_rows(run / "greedy.csv"), out_dir / f"{name}_greedy.svg"))
        if (run / "timings.csv").exists():
            written.append(plot_adjoint_times(_read_rows(run / "timings.csv"), out_dir / f"{name}_adjoint_time.svg"))
        if (run / "timing_summary.json").exists():
            s = json.loads((run / "timing_summary.json").read_text())
            summaries.append({**s, "run": name})
    if not written and not summaries:
        raise FileNotFoundError("no greedy.csv, timings.csv or timing_summary.json found in the given directories")
    rows = speedup_table(summaries)
    with open(out_dir / "speedup.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["run", "n_free", "speedup"])
        w.writeheader()
        w.writerows(rows)
    written.append(out_dir / "speedup.csv")
    written.append(plot_speedup(rows, out_dir / "speedup_vs_dof.svg"))
    return written
