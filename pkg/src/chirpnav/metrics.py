"""Error statistics for estimated trajectories, plus the two baselines a
fused run is expected to beat.

All position errors are anchor-relative: the absolute frame is only
observable up to the charger position, so an estimate is compared through
e = (p_hat - rho_hat) - (p_true - rho_true).  Orientation error is the
geodesic angle between quaternions.  RMSE excludes the warm-up prefix
(the estimates produced before the window first reached full length).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import dead_reckon
from .rotations import replace_yaw, wrap_angle, yaw_of
from .scene import sample_state


def geodesic_angle_deg(q1: np.ndarray, q2: np.ndarray) -> float:
    dot = abs(float(np.dot(q1, q2)))
    return float(np.degrees(2.0 * np.arccos(min(1.0, dot))))


@dataclass
class MetricsReport:
    n_solves: int
    n_excluded: int
    pos_rmse_m: float
    pos_mean_m: float
    pos_rmse_xyz_m: tuple
    orientation_mean_deg: float
    yaw_rmse_deg: float
    yaw_drift_dps: float
    solve_ms_mean: float
    solve_ms_max: float
    runtime_s: float
    feature_stats: dict | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "n_solves": self.n_solves,
            "n_excluded": self.n_excluded,
            "pos_rmse_m": self.pos_rmse_m,
            "pos_mean_m": self.pos_mean_m,
            "pos_rmse_xyz_m": list(self.pos_rmse_xyz_m),
            "orientation_mean_deg": self.orientation_mean_deg,
            "yaw_rmse_deg": self.yaw_rmse_deg,
            "yaw_drift_dps": self.yaw_drift_dps,
            "solve_ms_mean": self.solve_ms_mean,
            "solve_ms_max": self.solve_ms_max,
            "runtime_s": self.runtime_s,
        }
        if self.feature_stats is not None:
            out["feature_stats"] = self.feature_stats
        out.update(self.extras)
        return out


def error_series(times, positions, quats, rhos,
                 true_positions, true_quats, true_rho):
    """Per-sample anchor-relative errors for aligned trajectories.

    Returns (pos_err (n,3), orient_err_deg (n,), yaw_err_deg (n,)).
    """
    times = np.asarray(times, dtype=float)
    n = len(times)
    pos_err = np.zeros((n, 3))
    orient = np.zeros(n)
    yaw = np.zeros(n)
    true_rho = np.asarray(true_rho, dtype=float)
    for j in range(n):
        pos_err[j] = (np.asarray(positions[j]) - np.asarray(rhos[j])) \
            - (np.asarray(true_positions[j]) - true_rho)
        orient[j] = geodesic_angle_deg(np.asarray(quats[j]),
                                       np.asarray(true_quats[j]))
        yaw[j] = np.degrees(wrap_angle(yaw_of(np.asarray(quats[j]))
                                       - yaw_of(np.asarray(true_quats[j]))))
    return pos_err, orient, yaw


def _drift_slope_dps(times, yaw_err_deg) -> float:
    """Least-squares slope of the yaw error, deg per second."""
    t = np.asarray(times, dtype=float)
    if len(t) < 2 or t[-1] == t[0]:
        return 0.0
    a = np.polyfit(t, np.asarray(yaw_err_deg, dtype=float), 1)
    return float(a[0])


def summarize(times, pos_err, orient_err_deg, yaw_err_deg,
              n_excluded: int = 0, solve_ms=(), runtime_s: float = 0.0,
              feature_stats: dict | None = None) -> MetricsReport:
    """Fold aligned error series into a report; the first n_excluded
    samples only feed the drift slope, not the averages."""
    times = np.asarray(times, dtype=float)
    pos_err = np.asarray(pos_err, dtype=float)
    orient = np.asarray(orient_err_deg, dtype=float)
    yaw = np.asarray(yaw_err_deg, dtype=float)
    k = min(int(n_excluded), max(0, len(times) - 1))
    norms = np.linalg.norm(pos_err[k:], axis=1)
    ms = np.asarray(list(solve_ms), dtype=float)
    return MetricsReport(
        n_solves=len(times),
        n_excluded=k,
        pos_rmse_m=float(np.sqrt(np.mean(norms ** 2))),
        pos_mean_m=float(np.mean(norms)),
        pos_rmse_xyz_m=tuple(
            float(x) for x in np.sqrt(np.mean(pos_err[k:] ** 2, axis=0))),
        orientation_mean_deg=float(np.mean(orient[k:])),
        yaw_rmse_deg=float(np.sqrt(np.mean(yaw[k:] ** 2))),
        yaw_drift_dps=_drift_slope_dps(times[k:], yaw[k:]),
        solve_ms_mean=float(np.mean(ms)) if len(ms) else 0.0,
        solve_ms_max=float(np.max(ms)) if len(ms) else 0.0,
        runtime_s=float(runtime_s),
        feature_stats=feature_stats,
    )


def _percentiles(x) -> dict:
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return {"n": 0}
    return {"n": int(len(x)), "mean": float(np.mean(x)),
            "std": float(np.std(x)), "p50": float(np.percentile(x, 50)),
            "p90": float(np.percentile(x, 90)),
            "max": float(np.max(np.abs(x)))}


def feature_stats(result) -> dict:
    """Distribution of raw feature errors against scripted truth."""
    sc = result.scenario
    rho = np.asarray(sc.rho_true, dtype=float)
    d_err, a_err, psi_err = [], [], []
    for e in result.epochs:
        if e.feature is None:
            continue
        s = e.truth.p - rho
        d_true = float(np.linalg.norm(s))
        u_true = s / d_true
        d_err.append(e.feature.d - d_true)
        cosang = float(np.clip(np.dot(e.feature.a, u_true), -1.0, 1.0))
        a_err.append(np.degrees(np.arccos(cosang)))
        if e.feature.psi is not None:
            psi_err.append(np.degrees(
                wrap_angle(e.feature.psi - yaw_of(e.truth.q))))
    return {"range_m": _percentiles(d_err),
            "angle_deg": _percentiles(a_err),
            "yaw_deg": _percentiles(psi_err)}


def evaluate_run(result, n_excluded: int | None = None) -> MetricsReport:
    """MetricsReport for one simulated run, truth from the scenario."""
    sc = result.scenario
    rho_true = np.asarray(sc.rho_true, dtype=float)
    times = [t for (t, _, _) in result.estimates]
    truths = [sample_state(sc, t) for t in times]
    pos_err, orient, yaw = error_series(
        times,
        [st.p for (_, st, _) in result.estimates],
        [st.q for (_, st, _) in result.estimates],
        [r for (_, _, r) in result.estimates],
        [tr.p for tr in truths], [tr.q for tr in truths], rho_true)
    if n_excluded is None:
        n_excluded = result.window_n
    return summarize(times, pos_err, orient, yaw, n_excluded=n_excluded,
                     solve_ms=[s.wall_ms for s in result.solves],
                     runtime_s=result.runtime_s,
                     feature_stats=feature_stats(result))


def raw_triangulation_rmse(result, n_excluded: int | None = None) -> float:
    """Per-epoch position from d_hat * a_hat alone, no filtering.

    The raw solution has no anchor estimate of its own, so it is scored
    with the true anchor; errors are then exactly d_hat a_hat - s_true.
    """
    sc = result.scenario
    rho = np.asarray(sc.rho_true, dtype=float)
    if n_excluded is None:
        n_excluded = result.window_n
    errs = []
    seen = 0
    for e in result.epochs:
        if e.feature is None:
            continue
        seen += 1
        if seen <= n_excluded:
            continue
        s_true = e.truth.p - rho
        errs.append(np.linalg.norm(e.feature.d * e.feature.a - s_true))
    if not errs:
        return float("nan")
    return float(np.sqrt(np.mean(np.asarray(errs) ** 2)))


def dead_reckoning_error(result, t_eval: float | None = None) -> float:
    """Position error of pure strapdown at t_eval (default: end of run).

    The IMU-only vehicle is granted its true start pose and velocity
    except for heading, which nothing on board can observe: yaw starts
    at zero like the live estimator's gyro chain.
    """
    sc = result.scenario
    imu = result.imu
    if len(imu) < 2:
        return float("nan")
    truth0 = sample_state(sc, float(imu.t[0]))
    q0 = replace_yaw(truth0.q, 0.0)
    t, pos = dead_reckon(imu, truth0.p, truth0.v, q0)
    if t_eval is None:
        t_eval = float(t[-1])
    j = int(np.argmin(np.abs(t - t_eval)))
    tr = sample_state(sc, float(t[j]))
    return float(np.linalg.norm(pos[j] - tr.p))
