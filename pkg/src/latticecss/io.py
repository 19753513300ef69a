"""Plain-text emission and parsing of fields, states, traces and branches.

Fields are CSV files with a JSON sidecar carrying the window.  Every float is
written with 17 significant digits, which reproduces a double exactly on
re-parse.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .lattice import LatticeWindow

FLOAT_FORMAT = ".17g"


def fmt(x: float) -> str:
    return format(float(x), FLOAT_FORMAT)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def write_field(path, values: ArrayLike, window: LatticeWindow, real: bool | None = None) -> Path:
    """Write a lattice field as ``n,re,im`` (complex) or ``n,value`` (real) plus sidecar.

    ``real`` defaults to whether ``values`` has a real dtype.
    """
    path = Path(path)
    values = np.asarray(values)
    if values.shape != (window.size,):
        raise ValueError(f"field has {values.shape} values, window needs {window.size}")
    if real is None:
        real = not np.iscomplexobj(values)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if real:
            w.writerow(["n", "value"])
            for n, v in zip(window.sites, values.real):
                w.writerow([int(n), fmt(v)])
        else:
            w.writerow(["n", "re", "im"])
            for n, v in zip(window.sites, values.astype(complex)):
                w.writerow([int(n), fmt(v.real), fmt(v.imag)])
    meta = {"h": float(window.h), "n_min": window.n_min, "n_max": window.n_max}
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


def read_field(path) -> tuple[NDArray, LatticeWindow]:
    """Inverse of :func:`write_field`; returns ``(values, window)``."""
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    window = LatticeWindow(int(meta["n_min"]), int(meta["n_max"]), float(meta["h"]))
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    sites = [int(r[0]) for r in body]
    if sites != list(range(window.n_min, window.n_max + 1)):
        raise ValueError(f"{path}: site column does not match the sidecar window")
    if header == ["n", "value"]:
        values = np.array([float(r[1]) for r in body])
    elif header == ["n", "re", "im"]:
        values = np.array([complex(float(r[1]), float(r[2])) for r in body])
    else:
        raise ValueError(f"{path}: unrecognised header {header}")
    return values, window


def _finite_or_none(obj):
    # strict JSON has no inf/nan
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite_or_none(obj.item())
    return obj


def write_json(path, obj) -> Path:
    """Strict JSON; non-finite floats become ``null``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_finite_or_none(obj), indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def state_metadata(state) -> dict:
    p = state.params
    return {
        "lambda": p.lam,
        "p": p.p,
        "omega": p.omega,
        "h": p.h,
        "residual_linf": state.residual_linf,
        "iterations": state.iterations,
        "converged": bool(state.converged),
        "mass": state.mass,
    }


def write_state(out_dir, state, stem: str = "state") -> list[Path]:
    """Profile ``U`` and potential ``G`` as real field files plus metadata JSON."""
    out_dir = Path(out_dir)
    files = [
        write_field(out_dir / f"{stem}_u.csv", state.u, state.window, real=True),
        write_field(out_dir / f"{stem}_g.csv", state.g, state.window, real=True),
    ]
    meta = state_metadata(state)
    meta["message"] = state.message
    files.append(write_json(out_dir / f"{stem}.json", meta))
    return files


def write_trace(path, trace) -> Path:
    """Diagnostics of an evolution run as ``t,mass,constraint_linf``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    transported = trace.transported_constraint_series
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["t", "mass", "constraint_linf"]
        if transported is not None:
            head.append("transported_constraint_linf")
        w.writerow(head)
        for i, t in enumerate(trace.times):
            row = [fmt(t), fmt(trace.mass_series[i]), fmt(trace.constraint_series[i])]
            if transported is not None:
                row.append(fmt(transported[i]))
            w.writerow(row)
    return path


BRANCH_COLUMNS = ("arc", "h", "mass", "residual", "iterations", "tangent_dh", "fold_flag")


def write_branch(path, branch) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BRANCH_COLUMNS)
        for pt in branch.points:
            w.writerow([fmt(pt.arc_param), fmt(pt.h), fmt(pt.mass), fmt(pt.residual),
                        int(pt.iterations), fmt(pt.tangent_dh), int(pt.fold_flag)])
    return path


def read_branch_table(path) -> dict:
    """Columns of a branch CSV as arrays keyed by column name."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in BRANCH_COLUMNS}


def branch_summary(branch) -> dict:
    p = branch.params
    return {
        "seed_kind": branch.seed_kind,
        "params": {"lambda": p.lam, "p": p.p, "omega": p.omega},
        "fold_h": branch.fold_h,
        "folds": list(branch.folds),
        "termination": branch.termination,
        "n_points": len(branch.points),
        "h_range": [float(branch.h_values.min()), float(branch.h_values.max())],
    }


def write_branch_fields(out_dir, branch, stem: str) -> list[Path]:
    out_dir = Path(out_dir)
    return [write_field(out_dir / f"{stem}_pt{i:04d}.csv", pt.state.u, pt.state.window, real=True)
            for i, pt in enumerate(branch.points)]


def emit_branch_figure_data(branches, out_dir, stem: str = "branches") -> list[Path]:
    """One ``(h, mass)`` CSV per branch and a combined plot-ready JSON.

    The JSON has the shape
    ``{"branches": [{"seed_kind", "params", "fold_h", "points": [{"h", "mass"}]}]}``
    and is written even for an empty branch list.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files, entries = [], []
    for i, br in enumerate(branches):
        path = out_dir / f"{stem}_{i:02d}_{br.seed_kind}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "mass", "fold_flag"])
            for pt in br.points:
                w.writerow([fmt(pt.h), fmt(pt.mass), int(pt.fold_flag)])
        files.append(path)
        p = br.params
        entries.append({
            "seed_kind": br.seed_kind,
            "params": {"lambda": p.lam, "p": p.p, "omega": p.omega},
            "fold_h": br.fold_h,
            "points": [{"h": pt.h, "mass": pt.mass} for pt in br.points],
        })
    files.append(write_json(out_dir / f"{stem}.json", {"branches": entries}))
    return files
