"""End-to-end simulation runs: scripted flight in, state estimates out.

A run walks feature epochs (one 13-channel sweep each, spaced to land on
the IMU sample grid), produces a PoseFeature per epoch, preintegrates the
IMU between epochs, and maintains a sliding optimization window.  Three
fidelity modes share every stage downstream of the decoded bins:

- "waveform": synthesize and decode the actual chirp buffers.
- "phases":   skip the waveform; emit decoded-bin reports straight from
              the geometry (same terms the decoder would measure) plus
              configured bin/phase jitter.
- "features": skip the radio entirely; draw range/bearing/yaw features
              around ground truth with the configured sigmas.

The waveform path costs seconds per epoch, so long noisy runs are the
domain of the bypass modes; short runs validate the full stack.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .channel import (ArrayGeometry, propagate, roundtrip_delays,
                      tag_frequency_offsets)
from .chirp import ChirpConfig
from .constants import (CHANNEL_SPACING_HZ, NUM_CHANNELS, SPEED_OF_LIGHT,
                        channel_center_hz)
from .fusion import (NavState, Preintegrated, Window, initialize, preintegrate,
                     slide, solve)
from .phase import (BinReport, CfoCalibration, NoSignalError, VelocityFeedback,
                    calibrate_cfo, eliminate_rotational_shift, measure_frame,
                    remove_translational_shift, solve_channel_phases,
                    wrap_phase)
from .rotations import (quat_from_yaw, quat_multiply, quat_normalize,
                        quat_rotate, quat_to_matrix, replace_yaw, wrap_angle,
                        yaw_of)
from .scene import (ImuBatch, RigidState, Scenario, sample_state, synth_baro,
                    synth_imu)
from .sensing import (PoseFeature, VirtualMatrix, assemble_direction,
                      elevation_from_barometer, estimate_angle, estimate_range,
                      estimate_rotation)

MODES = ("waveform", "phases", "features")


def default_chirp_config(channel: int) -> ChirpConfig:
    """Standard waveform for one hop: SF12, 500 kHz, 9 MHz capture rate.

    fs is 18x the sweep bandwidth so all four tag tones (up to 4 MHz
    offset plus half the sweep) sit inside the sampled band with margin,
    and fs*T stays integral for exact bin alignment.
    """
    return ChirpConfig(sf=12, bw=500e3, fc=channel_center_hz(channel), fs=9e6)


def sweep_duration_s() -> float:
    return NUM_CHANNELS * default_chirp_config(6).duration


def epoch_spacing_s(imu_rate_hz: float) -> float:
    """Sweep cadence rounded up to a whole number of IMU sample periods.

    Preintegration segments must start and end exactly on IMU samples;
    the charger schedules sweeps on that grid (106.5 ms sweep -> 110 ms
    cadence at 100 Hz).
    """
    dt = 1.0 / imu_rate_hz
    return max(1, int(np.ceil(sweep_duration_s() / dt - 1e-9))) * dt


def expected_report(cfg: ChirpConfig, state: RigidState, layout, rho,
                    arr: ArrayGeometry, cfo_hz, antenna: int):
    """Noise-free decoded bins and peak phases for one antenna, one hop.

    This is the closed-form image of what propagate + measure_frame
    produce: bin = tag shift + CFO + Doppler + slope*tau, peak phase =
    carrier phase at the chirp start frequency.  The phases bypass mode
    feeds these to the same downstream code the decoder feeds.
    """
    rho = np.asarray(rho, dtype=float)
    taus = roundtrip_delays(state, layout, rho, arr)
    offsets = tag_frequency_offsets(state, layout, rho, cfo_hz, cfg.fc)
    bins = np.empty(4)
    phases = np.empty(4)
    for tag in range(4):
        tau = taus[tag, antenna]
        bins[tag] = offsets[tag] + cfg.slope * tau
        phases[tag] = wrap_phase(-2.0 * np.pi * cfg.fc * tau
                                 + 2.0 * np.pi * (0.5 * cfg.bw) * tau
                                 + np.pi * cfg.slope * tau * tau)
    return bins, phases


def synth_bin_reports(sc: Scenario, state: RigidState | None,
                      arr: ArrayGeometry, rng: np.random.Generator | None,
                      t0: float) -> list[BinReport]:
    """Phases-mode sweep: geometry-exact reports plus configured jitter.

    state=None resamples the trajectory at each hop time, keeping the
    sequential-sweep motion that waveform mode exhibits; pass an explicit
    state to freeze the pose (standstill calibration).
    """
    rho = np.asarray(sc.rho_true, dtype=float)
    out = []
    for ch in range(NUM_CHANNELS):
        cfg = default_chirp_config(ch)
        st = state if state is not None else sample_state(
            sc, t0 + ch * cfg.duration)
        for m in range(arr.n_antennas):
            bins, phases = expected_report(cfg, st, sc.tags, rho, arr,
                                           sc.noise.cfo_hz, m)
            if rng is not None and sc.noise.bin_sigma_hz > 0:
                bins = bins + rng.normal(scale=sc.noise.bin_sigma_hz, size=4)
            if rng is not None and sc.noise.phase_sigma_rad > 0:
                phases = wrap_phase(
                    phases + rng.normal(scale=sc.noise.phase_sigma_rad, size=4))
            out.append(BinReport(t0, m, ch, bins, phases, np.ones(4),
                                 np.ones(4, dtype=bool)))
    return out


@dataclass
class EpochLog:
    t: float
    truth: RigidState
    feature: PoseFeature | None
    q_ref: np.ndarray | None        # attitude reference handed to fusion
    q_chain: np.ndarray | None = None   # gyro-integrated attitude, yaw arbitrary
    f_t_hz: float | None = None     # residual timing tone, diagnostics
    lost: bool = False              # dropout or failed detection


@dataclass
class RunResult:
    scenario: Scenario
    mode: str
    epochs: list                     # EpochLog per epoch
    estimates: list                  # (t, NavState, rho) per solve
    solves: list                     # SolveReport per solve
    imu: ImuBatch
    calib: CfoCalibration | None
    exit_reason: str                 # "ok" | "signal_lost"
    runtime_s: float
    window_n: int = 30

    @property
    def times(self):
        return [e.t for e in self.epochs]


class SignalLostError(RuntimeError):
    """Raised when the feature stream stays dark past the allowed gap."""


def _noisy_feature(sc, truth, rho, rng, t):
    s = truth.p - rho
    d = float(np.linalg.norm(s))
    u = s / d
    sd = max(sc.noise.sigma_d_m, 1e-3)
    sa = max(sc.noise.sigma_a_rad, 1e-4)
    sp = max(sc.noise.sigma_psi_rad, 1e-3)
    if rng is not None:
        d = max(0.05, d + rng.normal(scale=sc.noise.sigma_d_m))
        tang = rng.normal(scale=sc.noise.sigma_a_rad, size=3)
        u = u + (np.eye(3) - np.outer(u, u)) @ tang
        u = u / np.linalg.norm(u)
        psi = wrap_angle(yaw_of(truth.q) + rng.normal(scale=sc.noise.sigma_psi_rad))
    else:
        psi = yaw_of(truth.q)
    return PoseFeature(t=t, d=d, a=u, psi=psi,
                       sigma_d=sd, sigma_a=sa, sigma_psi=sp)


def tag_ranges_from_reports(reports, cfg0, layout, calib, arr):
    """Per-tag stitched range estimates for one sweep."""
    psets = solve_channel_phases(reports, cfg0, layout, calib=calib,
                                 n_antennas=arr.n_antennas)
    freqs = np.array([channel_center_hz(ch) for ch in range(NUM_CHANNELS)])
    return [estimate_range(ps, freqs)[0] for ps in psets], psets


def _feature_from_reports(sc, reports, calib, arr, h_rel, omega_z, v_est, t,
                          fc_mid, sigma_b_hz):
    """Shared radio-side feature assembly for waveform and phases modes."""
    layout = sc.tags
    cfg0 = default_chirp_config(6)
    psets = solve_channel_phases(reports, cfg0, layout, calib=calib,
                                 n_antennas=arr.n_antennas)
    freqs = np.array([channel_center_hz(ch) for ch in range(NUM_CHANNELS)])

    vms = [VirtualMatrix.from_phase_set(ps) for ps in psets]
    _, native, degraded = estimate_angle(vms, arr, fc_mid)

    # pair statistics over every chirp and antenna of the sweep
    db = [[], []]
    avg_resid = [[], []]
    for rep in reports:
        for pair in (0, 1):
            try:
                avg, diff = eliminate_rotational_shift(rep, pair, layout)
            except NoSignalError:
                continue
            db[pair].append(diff - calib.pair_difference(pair))
            avg_resid[pair].append(avg - calib.pair_average(pair))
    slope = cfg0.slope
    range_rate_hz_per_m = 2.0 * slope / SPEED_OF_LIGHT
    doppler_hz_per_mps = fc_mid / SPEED_OF_LIGHT
    stretch_s = fc_mid * cfg0.duration / CHANNEL_SPACING_HZ

    # Hops are sequential, so radial motion between them tilts the
    # stitched phase ramp at carrier scale: raw range reads d + 3.41 s *
    # d_dot.  The pair-average residual mixes the same two unknowns the
    # other way, -(fc/c) d_dot + (2k/c)(d - d_cal), so the sweep itself
    # pins the radial rate; no estimator feedback enters the loop.
    d_raws = [estimate_range(ps, freqs)[0] for ps in psets]
    d_dot = 0.0
    if calib.tag_ranges_m is not None and avg_resid[0] and avg_resid[1]:
        resid = float(np.mean([np.mean(avg_resid[0]), np.mean(avg_resid[1])]))
        drift = float(np.mean(d_raws) - np.mean(calib.tag_ranges_m))
        d_dot = -(resid - range_rate_hz_per_m * drift) \
            / (doppler_hz_per_mps + range_rate_hz_per_m * stretch_s)
        d_dot = float(np.clip(d_dot, -4.0, 4.0))
    tau_dot = 2.0 * d_dot / SPEED_OF_LIGHT
    ramp = 2.0 * np.pi * freqs * tau_dot * np.arange(NUM_CHANNELS) \
        * cfg0.duration
    for ps in psets:
        ps.theta[:] = wrap_phase(ps.theta + ramp[None, :])

    d_hats = [estimate_range(ps, freqs)[0] for ps in psets]
    d_hat = float(np.mean(d_hats))
    if d_hat <= 0.05:
        raise NoSignalError("stitched range collapsed")
    xi, clamped = elevation_from_barometer(h_rel, d_hat)
    _, a_vec, _ = assemble_direction(native, xi)

    f_t = None
    psi = None
    sigma_psi = max(sc.noise.sigma_psi_rad, 1e-3)
    if avg_resid[0]:
        u_p = -a_vec
        f_t = remove_translational_shift(float(np.mean(avg_resid[0])), u_p,
                                         v_est, fc_mid)
        if calib.tag_ranges_m is not None:
            d_cal = 0.5 * (calib.tag_ranges_m[0] + calib.tag_ranges_m[1])
            f_t -= range_rate_hz_per_m * (0.5 * (d_hats[0] + d_hats[1]) - d_cal)
    if db[0] and db[1]:
        n_avg = min(len(db[0]), len(db[1]))
        means = [float(np.mean(db[0])), float(np.mean(db[1]))]
        if calib.tag_ranges_m is not None:
            # subtract the pose-geometry part of each pair difference:
            # opposing tags sit at different ranges, and that gap moved
            # since calibration
            for pair in (0, 1):
                a_i, b_i = layout.pairs[pair]
                geom_now = d_hats[a_i] - d_hats[b_i]
                geom_cal = calib.tag_ranges_m[a_i] - calib.tag_ranges_m[b_i]
                means[pair] -= range_rate_hz_per_m * (geom_now - geom_cal)
        phi_p = np.arctan2(-a_vec[1], -a_vec[0])
        # each difference mean carries sqrt(2) of the single-bin sigma
        sig_db = np.sqrt(2.0) * sigma_b_hz / max(1.0, np.sqrt(n_avg))
        psi, sig, ok = estimate_rotation(
            means[0], means[1], phi_p, omega_z,
            layout, fc_mid, xi=xi, sigma_b_hz=sig_db)
        if not ok:
            psi = None
        else:
            sigma_psi = max(sig, 1e-3)

    sd = max(sc.noise.sigma_d_m, 1e-3)
    sa = max(sc.noise.sigma_a_rad, 1e-4)
    feat = PoseFeature(t=t, d=d_hat, a=a_vec, psi=psi, sigma_d=sd,
                       sigma_a=sa, sigma_psi=sigma_psi, degraded=degraded)
    return feat, f_t


def _waveform_sweep(sc, arr, rng, t_epoch) -> list[BinReport]:
    layout = sc.tags
    rho = np.asarray(sc.rho_true, dtype=float)
    reports = []
    for ch in range(NUM_CHANNELS):
        cfg = default_chirp_config(ch)
        st = sample_state(sc, t_epoch + ch * cfg.duration)
        frame = propagate(cfg, ch, st, layout, rho, arr,
                          rays=sc.noise.multipath, cfo_hz=sc.noise.cfo_hz,
                          snr_db=sc.noise.snr_db, rng=rng,
                          t0=t_epoch + ch * cfg.duration)
        reports.extend(measure_frame(frame, cfg, layout))
    return reports


def _standstill_calibration(sc, mode, arr, rng,
                            n_sweeps: int = 20) -> CfoCalibration | None:
    """Pre-takeoff CFO capture: the t=0 pose, frozen, n_sweeps sweeps.

    Yaw sensing later subtracts the calibrated pair differences, so any
    error here rides along as a constant heading bias for the whole
    flight; a couple of seconds of standstill averaging keeps it small.
    """
    if mode == "features":
        return None
    truth0 = sample_state(sc, 0.0)
    frozen = RigidState(t=0.0, p=truth0.p, v=np.zeros(3), q=truth0.q,
                        omega=np.zeros(3), a=np.zeros(3))
    layout = sc.tags
    rho = np.asarray(sc.rho_true, dtype=float)
    sweeps = []
    for _ in range(max(1, n_sweeps)):
        if mode == "phases":
            reports = synth_bin_reports(sc, frozen, arr, rng, 0.0)
        else:
            reports = []
            for ch in range(NUM_CHANNELS):
                cfg = default_chirp_config(ch)
                frame = propagate(cfg, ch, frozen, layout, rho, arr,
                                  cfo_hz=sc.noise.cfo_hz,
                                  snr_db=sc.noise.snr_db, rng=rng)
                reports.extend(measure_frame(frame, cfg, layout))
        sweeps.append(reports)
    calib = calibrate_cfo([r for sw in sweeps for r in sw], sc.tags)
    # Phase-derived ranges carry no CFO, so capture the standstill tag
    # geometry too; epochs subtract it to isolate oscillator drift and
    # pair geometry from later motion.
    per_sweep = []
    for sw in sweeps:
        try:
            ranges, _ = tag_ranges_from_reports(sw, default_chirp_config(6),
                                                sc.tags, calib, arr)
        except NoSignalError:
            continue
        per_sweep.append(ranges)
    if not per_sweep:
        return calib
    mean_ranges = np.mean(np.asarray(per_sweep, dtype=float), axis=0)
    return CfoCalibration(per_tag_hz=calib.per_tag_hz,
                          tag_ranges_m=tuple(float(r) for r in mean_ranges))


def run_scenario(sc: Scenario, mode: str = "features", window_n: int = 30,
                 max_gap_epochs: int = 25, arr: ArrayGeometry | None = None,
                 fix_yaw: bool | None = None, cal_sweeps: int = 20,
                 solver_iters: int = 20,
                 solver_tol: float = 1e-6) -> RunResult:
    """Simulate one flight and estimate it online.

    Raises SignalLostError when more than max_gap_epochs consecutive
    epochs produce no feature (the estimator would be coasting on IMU
    alone with unbounded drift).
    """
    if mode not in MODES:
        raise ValueError(f"mode {mode!r} not one of {MODES}")
    if arr is None:
        arr = ArrayGeometry()
    wall = time.perf_counter()
    rng = np.random.default_rng(sc.seed)
    rho_true = np.asarray(sc.rho_true, dtype=float)
    layout = sc.tags
    fc_mid = channel_center_hz(6)

    calib = _standstill_calibration(sc, mode, arr, rng, n_sweeps=cal_sweeps)
    baro_t, baro_h = synth_baro(sc, rng)
    baro_datum = rho_true[2]    # surveyed once, before takeoff

    dt_ep = epoch_spacing_s(sc.imu_rate_hz)
    n_epochs = int(np.floor(sc.duration_s / dt_ep + 1e-9)) + 1
    if n_epochs < 3:
        raise ValueError("scenario shorter than three feature epochs")
    dropout = set(int(i) for i in sc.dropout_epochs)

    truth0 = sample_state(sc, 0.0)
    # roll/pitch are observable at standstill from gravity; heading is not
    q_chain = replace_yaw(truth0.q, 0.0)
    feedback = VelocityFeedback()
    sigma_b = sc.noise.bin_sigma_hz

    epochs: list[EpochLog] = []
    estimates = []
    solves = []
    preints = []
    imu_parts = []
    win: Window | None = None
    missing_run = 0
    lost_at = None

    for i in range(n_epochs):
        t_i = round(i * dt_ep, 9)
        truth = sample_state(sc, t_i)
        pre = None
        if i > 0:
            seg = synth_imu(sc, rng, t_start=round((i - 1) * dt_ep, 9), t_end=t_i)
            imu_parts.append(seg)
            pre = preintegrate(seg, sc.noise.accel_sigma, sc.noise.gyro_sigma)
            preints.append(pre)
            q_chain = quat_normalize(quat_multiply(q_chain, pre.gamma))
            omega_z = float(quat_rotate(q_chain, np.mean(seg.gyro, axis=0))[2])
        else:
            omega_z = float(quat_rotate(q_chain, truth.omega)[2])

        feature = None
        f_t = None
        if i not in dropout:
            if mode == "features":
                feature = _noisy_feature(sc, truth, rho_true, rng, t_i)
            else:
                if mode == "phases":
                    reports = synth_bin_reports(sc, None, arr, rng, t_i)
                else:
                    reports = _waveform_sweep(sc, arr, rng, t_i)
                bidx = min(len(baro_t) - 1, int(round(t_i * sc.baro_rate_hz)))
                h_rel = float(baro_h[bidx]) - baro_datum
                v_est, _ = feedback.get(t_i)
                try:
                    feature, f_t = _feature_from_reports(
                        sc, reports, calib, arr, h_rel, omega_z, v_est, t_i,
                        fc_mid, sigma_b)
                except NoSignalError:
                    feature = None

        if feature is None:
            missing_run += 1
            if missing_run > max_gap_epochs:
                lost_at = t_i
                epochs.append(EpochLog(t_i, truth, None, None, lost=True))
                break
        else:
            missing_run = 0

        q_ref = None
        if feature is not None and feature.psi is not None:
            q_ref = replace_yaw(q_chain, feature.psi)
        epochs.append(EpochLog(t_i, truth, feature, q_ref, q_chain.copy(),
                               f_t, feature is None))

        # --- estimator bookkeeping ---
        if win is None:
            usable = sum(1 for e in epochs if e.feature is not None)
            if usable >= 3 and len(epochs) >= 3:
                lo = max(0, len(epochs) - window_n)
                segment = epochs[lo:]
                if sum(1 for e in segment if e.feature is not None) >= 3:
                    win = initialize([e.t for e in segment],
                                     [e.feature for e in segment],
                                     _chain_attitudes(segment),
                                     preints[lo:len(epochs) - 1],
                                     n_max=window_n)
                    tick = time.perf_counter()
                    rep = solve(win, max_iters=solver_iters, tol=solver_tol,
                                fix_yaw=fix_yaw)
                    rep.wall_ms = (time.perf_counter() - tick) * 1e3
                    solves.append(rep)
                    _publish(estimates, win)
                    feedback.update(t_i, win.states[-1].v)
        else:
            st_prev = win.states[-1]
            st_new = _propagate_state(st_prev, pre)
            if win.full:
                win = slide(win, t_i, st_new, feature, q_ref, pre)
            else:
                win.append(t_i, st_new, feature, q_ref, pre)
            tick = time.perf_counter()
            rep = solve(win, max_iters=solver_iters, tol=solver_tol,
                        fix_yaw=fix_yaw)
            rep.wall_ms = (time.perf_counter() - tick) * 1e3
            solves.append(rep)
            _publish(estimates, win)
            feedback.update(t_i, win.states[-1].v)

    imu_all = _concat_imu(imu_parts)
    result = RunResult(sc, mode, epochs, estimates, solves, imu_all, calib,
                       "signal_lost" if lost_at is not None else "ok",
                       time.perf_counter() - wall, window_n)
    if lost_at is not None:
        raise SignalLostError(
            f"no usable feature for {missing_run} epochs ending t={lost_at:.2f}s",
            result)
    return result


def _chain_attitudes(epochs):
    """Attitude seed per epoch: the gyro chain, yaw-shifted so the most
    recent measured yaw lines up; plain chain before any measurement."""
    offset = 0.0
    offsets = []
    for e in epochs:
        if e.q_ref is not None:
            offset = wrap_angle(yaw_of(e.q_ref) - yaw_of(e.q_chain))
        offsets.append(offset)
    # epochs before the first measurement borrow its offset
    first = next((j for j, e in enumerate(epochs) if e.q_ref is not None), None)
    if first is not None:
        for j in range(first):
            offsets[j] = offsets[first]
    out = []
    for e, off in zip(epochs, offsets):
        out.append(quat_normalize(quat_multiply(quat_from_yaw(off), e.q_chain)))
    return out


def _propagate_state(st: NavState, pre: Preintegrated) -> NavState:
    from .scene import gravity_vector
    g = gravity_vector()
    r = quat_to_matrix(st.q)
    dt = pre.dt
    p = st.p + st.v * dt - 0.5 * g * dt * dt + r @ pre.alpha
    v = st.v - g * dt + r @ pre.beta
    q = quat_normalize(quat_multiply(st.q, pre.gamma))
    return NavState(p, v, q)


def _publish(estimates, win: Window):
    st = win.states[-1]
    estimates.append((win.times[-1], st.copy(), win.rho.copy()))


def _concat_imu(parts) -> ImuBatch:
    if not parts:
        z = np.zeros((0, 3))
        return ImuBatch(np.zeros(0), z, z)
    ts = [parts[0].t]
    accs = [parts[0].acc]
    gyros = [parts[0].gyro]
    for seg in parts[1:]:
        ts.append(seg.t[1:])
        accs.append(seg.acc[1:])
        gyros.append(seg.gyro[1:])
    return ImuBatch(np.concatenate(ts), np.vstack(accs), np.vstack(gyros))
