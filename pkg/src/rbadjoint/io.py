"""File formats: RBM1 binary matrices, CSV exports and legacy VTK density output."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RBM1"
_HEADER = struct.Struct("<4sQQ")


def write_rbm1(path, matrix, metadata: dict | None = None) -> None:
    """Write ``matrix`` as RBM1 (column-major float64) plus an optional ``.json`` sidecar."""
    A = np.asarray(matrix, dtype="<f8")
    if A.ndim != 2:
        raise ValueError("RBM1 stores 2-D arrays only")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, A.shape[0], A.shape[1]))
        fh.write(np.asfortranarray(A).tobytes(order="F"))
    if metadata is not None:
        sidecar(path).write_text(json.dumps(metadata, indent=1, sort_keys=True))


def read_rbm1(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.reshape((rows, cols), order="F").astype(float)


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def read_sidecar(path) -> dict:
    return json.loads(sidecar(path).read_text())


def problem_hash(problem) -> str:
    """Stable digest of the mesh, material, load, objective and time settings."""
    m = problem.mesh
    parts = [
        (m.nx, m.ny, m.lx, m.ly, m.thickness, sorted(m.fixed_dofs)),
        problem.material,
        problem.load,
        problem.objective,
        (problem.grid.n_steps, problem.grid.dt),
        problem.hht,
    ]
    return hashlib.sha256(repr(parts).encode()).hexdigest()[:16]


def basis_metadata(problem) -> dict:
    return {
        "problem_hash": problem_hash(problem),
        "dt": problem.grid.dt,
        "n_steps": problem.grid.n_steps,
        "hht": {"alpha": problem.hht.alpha, "beta": problem.hht.beta, "delta": problem.hht.delta},
    }


def write_trajectory_csv(path, traj, dofs=None) -> None:
    """One row per instant: step, time, then displacements of the selected free dofs."""
    dofs = list(range(traj.d.shape[1])) if dofs is None else [int(k) for k in dofs]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", *[f"d{k}" for k in dofs]])
        for i, t in enumerate(traj.grid.times):
            w.writerow([i, repr(float(t)), *[repr(float(x)) for x in traj.d[i, dofs]]])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def write_gradient_csv(path, gradient) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "dfdb"])
        for e, g in enumerate(np.asarray(gradient, dtype=float)):
            w.writerow([e, repr(float(g))])


HISTORY_FIELDS = ("iteration", "objective", "volume", "model_used", "max_change", "gradient_norm",
                  "n_changed", "estimated_error")
TIMING_FIELDS = ("iteration", "model_used", "adjoint_seconds")


def write_history(out_dir, history) -> tuple[Path, Path]:
    """Split a history into ``history.csv`` (deterministic) and ``timings.csv`` (wall times)."""
    out_dir = Path(out_dir)
    hpath, tpath = out_dir / "history.csv", out_dir / "timings.csv"
    for path, fields in ((hpath, HISTORY_FIELDS), (tpath, TIMING_FIELDS)):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(fields)
            for r in history.records:
                w.writerow([_fmt(getattr(r, f)) for f in fields])
    return hpath, tpath


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def write_vtk(path, mesh, density, title: str = "density") -> None:
    """Legacy ASCII VTK unstructured grid of quads with cell density values."""
    density = np.asarray(density, dtype=float)
    if density.shape != (mesh.n_elements,):
        raise ValueError("one density value per element expected")
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} float"]
    lines += [f"{x:.9g} {y:.9g} 0" for x, y in mesh.node_coords]
    conn = mesh.element_connectivity
    lines.append(f"CELLS {mesh.n_elements} {5 * mesh.n_elements}")
    lines += ["4 " + " ".join(str(int(n)) for n in c) for c in conn]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += ["9"] * mesh.n_elements  # VTK_QUAD
    lines += [f"CELL_DATA {mesh.n_elements}", "SCALARS density float 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.9g}" for v in density]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_density(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    k = lines.index("LOOKUP_TABLE default")
    n = int(next(ln for ln in lines if ln.startswith("CELL_DATA")).split()[1])
    return np.array([float(v) for v in lines[k + 1:k + 1 + n]])
