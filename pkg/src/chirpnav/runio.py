"""CSV and JSON artifacts for simulation runs.

Column layouts live in docs/formats.md.  Floats are written with 9
significant digits so repeated runs under the same seed are
byte-identical; a missing yaw measurement becomes "nan".
"""

from __future__ import annotations

import json
import os

import numpy as np

TRAJECTORY_COLUMNS = ("t", "px", "py", "pz", "vx", "vy", "vz",
                      "qw", "qx", "qy", "qz", "rho_x", "rho_y", "rho_z")
FEATURE_COLUMNS = ("t", "d", "ax", "ay", "az", "psi",
                   "sigma_d", "sigma_a", "sigma_psi")


def _fmt(x: float) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{x:.9g}"


def _write_csv(path: str, columns, rows):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_fmt(float(x)) for x in row) + "\n")


def write_ground_truth(path: str, result) -> None:
    """Truth pose at every epoch time, with the true anchor appended."""
    sc = result.scenario
    rho = np.asarray(sc.rho_true, dtype=float)
    rows = []
    for e in result.epochs:
        tr = e.truth
        rows.append([e.t, *tr.p, *tr.v, *tr.q, *rho])
    _write_csv(path, TRAJECTORY_COLUMNS, rows)


def write_estimate(path: str, result) -> None:
    rows = []
    for (t, st, rho) in result.estimates:
        rows.append([t, *st.p, *st.v, *st.q, *rho])
    _write_csv(path, TRAJECTORY_COLUMNS, rows)


def write_features(path: str, result) -> None:
    rows = []
    for e in result.epochs:
        ft = e.feature
        if ft is None:
            continue
        psi = float("nan") if ft.psi is None else ft.psi
        rows.append([ft.t, ft.d, *ft.a, psi,
                     ft.sigma_d, ft.sigma_a, ft.sigma_psi])
    _write_csv(path, FEATURE_COLUMNS, rows)


def read_trajectory(path: str):
    """Columns of a trajectory CSV as a dict of float arrays."""
    with open(path, newline="\n") as f:
        header = f.readline().strip().split(",")
        data = [line.strip().split(",") for line in f if line.strip()]
    arr = np.array([[float(v) for v in row] for row in data], dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise ValueError(f"{path}: ragged CSV")
    return {name: arr[:, j] for j, name in enumerate(header)}


def write_metrics(path: str, report, extras: dict | None = None) -> None:
    doc = report.to_dict()
    if extras:
        doc.update(extras)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def write_run_artifacts(out_dir: str, result, report,
                        resolved_config: dict | None = None) -> None:
    """Standard simulate output: three CSVs, metrics, resolved config."""
    os.makedirs(out_dir, exist_ok=True)
    write_ground_truth(os.path.join(out_dir, "ground_truth.csv"), result)
    write_features(os.path.join(out_dir, "features.csv"), result)
    write_estimate(os.path.join(out_dir, "estimate.csv"), result)
    write_metrics(os.path.join(out_dir, "metrics.json"), report,
                  extras={"exit_reason": result.exit_reason,
                          "mode": result.mode})
    if resolved_config is not None:
        with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
            json.dump(resolved_config, f, indent=2, sort_keys=True)
            f.write("\n")
