"""Per-channel phase recovery from dechirped backscatter frames.

The measured peak phase of a dechirped tag return on channel ch is

    theta_meas = -2 pi f_ch tau + 2 pi (bw/2) tau + pi (bw/T) tau^2

i.e. the round-trip channel phase at the chirp's start frequency.  This
module estimates tau from the decoded bins, strips the start-frequency
terms, and emits one representative phase per (antenna, channel) at the
channel center: the summed intra-chirp phase collapsed to the quantity the
range and angle stages consume.  Bin bookkeeping (opposing-tag averaging,
CFO calibration, translational-Doppler removal) lives here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chirp import (
    ChirpConfig,
    dechirp,
    fractional_peak,
    make_downchirp,
    spectrum_median_magnitude,
)
from .constants import NUM_CHANNELS, SPEED_OF_LIGHT
from .scene import ImuBatch, TagLayout

DETECTION_FACTOR = 5.0  # peak must exceed this multiple of the median bin


class NoSignalError(RuntimeError):
    """Raised when a backscatter return cannot be detected."""


class CalibrationMotionError(RuntimeError):
    """Raised when the vehicle moves during CFO calibration."""


@dataclass
class BinReport:
    """Decoded tag tones for one antenna on one chirp."""

    t: float
    antenna: int
    channel: int
    bins_hz: np.ndarray    # (4,) fractional peak positions as Hz
    phases: np.ndarray     # (4,) peak phases, rad
    mags: np.ndarray       # (4,) peak magnitudes
    detected: np.ndarray   # (4,) bool


@dataclass(frozen=True)
class CfoCalibration:
    """Standstill bin offsets, captured once before takeoff.

    per_tag_hz[i] is the stationary (bin - f0) residual of tag i: its
    oscillator offset plus the (constant, sub-bin) timing term at the
    calibration spot.  Pair averages correct the translational currency,
    pair differences correct the rotational one; the paper's calibration
    names only the pair average, but without the difference term a per-tag
    CFO split would masquerade as permanent rotation.
    """

    per_tag_hz: tuple
    # per-tag stitched ranges at the calibration pose, if the caller
    # measured them; phase-derived so they carry no CFO.  They let later
    # epochs separate the pose-geometry part of a pair difference from
    # the oscillator part.
    tag_ranges_m: tuple | None = None

    def pair_average(self, pair: int) -> float:
        a, b = TagLayout.pairs[pair]
        return 0.5 * (self.per_tag_hz[a] + self.per_tag_hz[b])

    def pair_difference(self, pair: int) -> float:
        a, b = TagLayout.pairs[pair]
        return self.per_tag_hz[a] - self.per_tag_hz[b]


@dataclass
class PhaseSet:
    """Per-antenna, per-channel phases for one tag, with quality weights."""

    tag: int
    theta: np.ndarray    # (M, n_channels) wrapped to (-pi, pi]
    weight: np.ndarray   # (M, n_channels) in [0, 1]; 0 = missing

    def channels_present(self) -> int:
        return int(np.sum(np.any(self.weight > 0, axis=0)))


def wrap_phase(x):
    return -np.mod(-np.asarray(x) + np.pi, 2.0 * np.pi) + np.pi


def measure_frame(frame, cfg: ChirpConfig, layout: TagLayout) -> list[BinReport]:
    """Dechirp every antenna of a frame and pull out all four tag tones.

    cfg must be the excitation config (f0 = 0); each tag is searched in a
    window of half the tag spacing around its nominal shift bin.
    """
    if cfg.f0 != 0.0:
        raise ValueError("measure_frame expects the excitation config (f0=0)")
    n = cfg.n_samples
    shifts = np.asarray(layout.shifts_hz)
    # half the minimum tag separation, in bins
    half = int(round(np.min(np.diff(np.sort(shifts))) * cfg.duration / 2.0))
    reports = []
    for m in range(frame.n_antennas):
        res = dechirp(frame.antenna(m), cfg)
        spec = res.spectrum
        product = None
        med = spectrum_median_magnitude(spec)
        bins_hz = np.zeros(4)
        phases = np.zeros(4)
        mags = np.zeros(4)
        det = np.zeros(4, dtype=bool)
        for tag in range(4):
            center = int(round(shifts[tag] * cfg.duration))
            lo, hi = center - half, center + half
            window = np.abs(spec[lo:hi])
            k_local = int(np.argmax(window))
            k0 = lo + k_local
            peak_mag = window[k_local]
            if peak_mag < DETECTION_FACTOR * med:
                continue
            if product is None:
                # rebuilt once per antenna, only when something was detected
                product = frame.antenna(m).samples[:n] * make_downchirp(cfg).samples
            x, ph, mag = fractional_peak(spec, product, k0=k0)
            bins_hz[tag] = x / cfg.duration
            phases[tag] = ph
            mags[tag] = mag
            det[tag] = True
        reports.append(BinReport(frame.t0, m, frame.channel,
                                 bins_hz, phases, mags, det))
    return reports


def eliminate_rotational_shift(report: BinReport, pair: int,
                               layout: TagLayout | None = None) -> tuple[float, float]:
    """Opposing-tag average and difference for one pair of a report.

    The average cancels the rotational Doppler (equal magnitude, opposite
    sign across the pair) leaving timing + translational terms; the
    difference isolates twice the rotational shift.
    """
    if layout is None:
        layout = TagLayout()
    a, b = layout.pairs[pair]
    if not (report.detected[a] and report.detected[b]):
        raise NoSignalError(f"pair {pair} not fully detected")
    ba = report.bins_hz[a] - layout.shifts_hz[a]
    bb = report.bins_hz[b] - layout.shifts_hz[b]
    return 0.5 * (ba + bb), ba - bb


def calibrate_cfo(reports: list[BinReport], layout: TagLayout,
                  imu: ImuBatch | None = None,
                  gyro_limit: float = 0.05, accel_limit: float = 0.3) -> CfoCalibration:
    """Average standstill bin residuals into per-tag offsets.

    If an IMU batch covering the calibration span is supplied, motion above
    the limits raises CalibrationMotionError: the averages are only CFO(+
    static timing) when Doppler is absent.
    """
    if not reports:
        raise ValueError("no calibration reports")
    if imu is not None and len(imu):
        if np.max(np.abs(imu.gyro)) > gyro_limit:
            raise CalibrationMotionError("gyro activity during calibration")
        acc_dev = imu.acc - np.mean(imu.acc, axis=0, keepdims=True)
        if np.max(np.abs(acc_dev)) > accel_limit:
            raise CalibrationMotionError("accelerometer activity during calibration")
    shifts = np.asarray(layout.shifts_hz)
    sums = np.zeros(4)
    counts = np.zeros(4)
    for rep in reports:
        for tag in range(4):
            if rep.detected[tag]:
                sums[tag] += rep.bins_hz[tag] - shifts[tag]
                counts[tag] += 1
    if np.any(counts == 0):
        raise NoSignalError("a tag was never detected during calibration")
    return CfoCalibration(tuple(sums / counts))


def remove_translational_shift(avg_hz: float, u_p: np.ndarray,
                               v_t_est: np.ndarray, fc: float) -> float:
    """Strip the estimated translational Doppler from a pair average."""
    u_p = np.asarray(u_p, dtype=float)
    return float(avg_hz - (fc / SPEED_OF_LIGHT) * (u_p @ np.asarray(v_t_est, float)))


class VelocityFeedback:
    """Latest velocity estimate fed back from the estimator.

    Single-writer, many-reader cell; readers use the newest value and can
    query its staleness.  Before any update the feedback is zero (the
    vehicle starts at rest).
    """

    def __init__(self):
        self._t = None
        self._v = np.zeros(3)

    def update(self, t: float, v: np.ndarray):
        self._t = float(t)
        self._v = np.asarray(v, dtype=float).copy()

    def get(self, t: float, stale_after: float = 0.2):
        stale = self._t is not None and (t - self._t) > stale_after
        return self._v.copy(), stale


def solve_channel_phases(reports: list[BinReport], cfg: ChirpConfig,
                         layout: TagLayout,
                         calib: CfoCalibration | None = None,
                         n_antennas: int = 3,
                         n_channels: int = NUM_CHANNELS) -> list[PhaseSet]:
    """Collapse an epoch's bin reports into per-tag channel PhaseSets.

    For each (tag, antenna, channel) the timing delay is re-estimated from
    the decoded bin (minus tag shift and calibration offset) and the
    start-frequency terms are removed, leaving the channel-center phase
    -2 pi f_ch tau.  Doppler residuals in tau-hat only rotate all channels
    of a tag together, which the range profile is invariant to.
    """
    shifts = np.asarray(layout.shifts_hz)
    theta = np.zeros((4, n_antennas, n_channels))
    weight = np.zeros((4, n_antennas, n_channels))
    mags = np.zeros((4, n_antennas, n_channels))
    for rep in reports:
        ch, m = rep.channel, rep.antenna
        if not (0 <= ch < n_channels) or not (0 <= m < n_antennas):
            raise ValueError("report outside the configured grid")
        for tag in range(4):
            if not rep.detected[tag]:
                continue
            resid = rep.bins_hz[tag] - shifts[tag]
            if calib is not None:
                pair = 0 if tag < 2 else 1
                sign = 1.0 if tag == TagLayout.pairs[pair][0] else -1.0
                resid -= (calib.pair_average(pair)
                          + 0.5 * sign * calib.pair_difference(pair))
            tau = max(resid, 0.0) / cfg.slope
            corr = 2.0 * np.pi * (0.5 * cfg.bw) * tau + np.pi * cfg.slope * tau * tau
            theta[tag, m, ch] = wrap_phase(rep.phases[tag] - corr)
            mags[tag, m, ch] = rep.mags[tag]
            weight[tag, m, ch] = 1.0
    out = []
    for tag in range(4):
        top = np.max(mags[tag])
        if top > 0:
            weight[tag] *= np.clip(mags[tag] / top, 0.0, 1.0)
        out.append(PhaseSet(tag, theta[tag], weight[tag]))
    return out
