"""Pose features from channel phases and bin differences.

Three independent estimators feed one PoseFeature per epoch:

* range from the stitched-channel delay profile of each tag's PhaseSet,
* azimuth from a noise-subspace scan over each tag's virtual measurement
  matrix, reduced to a 3D direction with the barometric elevation,
* yaw from the rotational Doppler split of the two opposing tag pairs.

Angle conventions: the subspace scan works in the array's native angle
(steering s_m = exp(-j m eta sin(angle))), which for our y-axis array is
the negated arcsine of the arrival direction's y component.  The world
azimuth conversion happens once, in `assemble_direction`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import ArrayGeometry
from .constants import SPEED_OF_LIGHT
from .phase import NoSignalError, PhaseSet, wrap_phase
from .scene import TagLayout

MIN_CHANNELS = 8
DIRECT_PATH_FRACTION = 0.25  # energy threshold for the earliest-peak pick
OMEGA_MIN = 0.1              # rad/s; rotation unobservable below this
GATE_FACTOR = 1.5            # require |A| >= GATE_FACTOR * sigma_B


@dataclass
class MultipathProfile:
    delays_s: np.ndarray
    magnitude: np.ndarray    # non-negative, noncoherently summed over antennas
    direct_delay_s: float

    def __post_init__(self):
        if np.any(self.magnitude < 0):
            raise ValueError("profile magnitudes must be non-negative")


@dataclass(frozen=True)
class VirtualMatrix:
    """Unit-magnitude phase matrix: antennas x channel snapshots."""

    entries: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_phase_set(cls, ps: PhaseSet) -> "VirtualMatrix":
        cols = np.any(ps.weight > 0, axis=0)
        theta = ps.theta[:, cols]
        w = np.min(np.where(ps.weight[:, cols] > 0, ps.weight[:, cols], np.inf),
                   axis=0)
        w = np.where(np.isfinite(w), w, 0.0)
        return cls(np.exp(1j * theta), w)


@dataclass
class PoseFeature:
    """One backscatter observation of the vehicle."""

    t: float
    d: float
    a: np.ndarray
    psi: float | None
    sigma_d: float
    sigma_a: float
    sigma_psi: float
    degraded: bool = False

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("range must be positive")
        self.a = np.asarray(self.a, dtype=float)
        if abs(np.linalg.norm(self.a) - 1.0) > 1e-6:
            raise ValueError("direction must be a unit vector")
        if self.psi is not None and not (-np.pi < self.psi <= np.pi + 1e-12):
            raise ValueError("yaw out of range")


@lru_cache(maxsize=8)
def _delay_dictionary(freqs: tuple, tau_max: float, n_grid: int):
    tau = np.linspace(0.0, tau_max, n_grid)
    f = np.asarray(freqs)
    return tau, np.exp(2j * np.pi * np.outer(f, tau))


def stitched_profile(ps: PhaseSet, channel_freqs, tau_max_s: float = 4.0e-7,
                     n_grid: int = 4096) -> MultipathProfile:
    """Delay power profile from one tag's per-channel phasors.

    Correlates the measured phasors exp(j theta) against the delay
    hypothesis exp(-j 2 pi f tau) on a fine grid (equivalent to a heavily
    zero-padded inverse FFT but tolerant of missing channels and weights),
    summing |.|^2 over antennas.  The direct path is the earliest local
    peak above DIRECT_PATH_FRACTION of the profile maximum.
    """
    freqs = tuple(float(f) for f in channel_freqs)
    if len(freqs) != ps.theta.shape[1]:
        raise ValueError("channel frequency list does not match the PhaseSet")
    if ps.channels_present() < MIN_CHANNELS:
        raise NoSignalError(
            f"only {ps.channels_present()} channels present, need {MIN_CHANNELS}")
    tau, dic = _delay_dictionary(freqs, tau_max_s, n_grid)
    phasors = ps.weight * np.exp(1j * ps.theta)     # (M, n_ch)
    resp = phasors @ dic                            # (M, n_grid)
    mag = np.sum(np.abs(resp) ** 2, axis=0)
    peak = float(np.max(mag))
    if peak <= 0:
        raise NoSignalError("empty profile")
    # earliest local maximum above the energy threshold
    thr = DIRECT_PATH_FRACTION * peak
    idx = None
    for i in range(1, len(mag) - 1):
        if mag[i] >= thr and mag[i] >= mag[i - 1] and mag[i] > mag[i + 1]:
            idx = i
            break
    if idx is None:
        idx = int(np.argmax(mag))
    # parabolic sub-grid refinement
    if 0 < idx < len(mag) - 1:
        y0, y1, y2 = mag[idx - 1], mag[idx], mag[idx + 1]
        denom = y0 - 2.0 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if abs(denom) > 0 else 0.0
        shift = float(np.clip(shift, -0.5, 0.5))
    else:
        shift = 0.0
    dtau = tau[1] - tau[0]
    direct = float(tau[idx] + shift * dtau)
    return MultipathProfile(tau, mag, direct)


def estimate_range(ps: PhaseSet, channel_freqs, **kw) -> tuple[float, MultipathProfile]:
    """Round-trip delay peak of one tag, as one-way range in meters."""
    prof = stitched_profile(ps, channel_freqs, **kw)
    return SPEED_OF_LIGHT * prof.direct_delay_s / 2.0, prof


def _steering(arr: ArrayGeometry, fc: float, angles: np.ndarray) -> np.ndarray:
    """(M, len(angles)) steering matrix s_m = exp(-j m eta sin(angle))."""
    m = np.arange(arr.n_antennas)
    return np.exp(-1j * arr.eta(fc) * np.outer(m, np.sin(angles)))


def subspace_spectrum(vm: VirtualMatrix, arr: ArrayGeometry, fc: float,
                      angles: np.ndarray):
    """Noise-subspace pseudospectrum and Bartlett beampower over angles.

    Returns (music, bartlett, k_hat, degraded).  The covariance is built
    from weighted channel snapshots with forward-backward averaging; the
    signal count is the number of eigenvalues within a factor 10 of the
    largest, capped at M-1.  A rank-deficient covariance (fewer than two
    usable snapshots) degrades to Bartlett-only.
    """
    x = vm.entries
    w = vm.weights
    m = x.shape[0]
    usable = int(np.sum(w > 0))
    wsum = float(np.sum(w))
    if wsum <= 0:
        raise NoSignalError("no usable snapshots")
    r = (w[None, :] * x) @ x.conj().T / wsum
    j = np.eye(m)[::-1]
    r = 0.5 * (r + j @ r.conj() @ j)
    r = 0.5 * (r + r.conj().T)
    s = _steering(arr, fc, angles)
    bartlett = np.real(np.einsum("ma,mn,na->a", s.conj(), r, s))
    if usable < 2:
        return None, bartlett, 1, True
    lam, vec = np.linalg.eigh(r)          # ascending
    lam = np.maximum(lam[::-1], 0.0)      # descending
    vec = vec[:, ::-1]
    k_hat = int(np.sum(lam >= lam[0] / 10.0))
    k_hat = max(1, min(k_hat, m - 1))
    noise = vec[:, k_hat:]
    denom = np.sum(np.abs(noise.conj().T @ s) ** 2, axis=0)
    music = 1.0 / np.maximum(denom, 1e-18)
    return music, bartlett, k_hat, False


def _refine_peak(angles: np.ndarray, spec: np.ndarray, idx: int) -> float:
    if idx <= 0 or idx >= len(spec) - 1:
        return float(angles[idx])
    y0, y1, y2 = np.log(spec[idx - 1] + 1e-300), np.log(spec[idx] + 1e-300), \
        np.log(spec[idx + 1] + 1e-300)
    denom = y0 - 2.0 * y1 + y2
    if abs(denom) <= 0:
        return float(angles[idx])
    shift = float(np.clip(0.5 * (y0 - y2) / denom, -0.5, 0.5))
    return float(angles[idx] + shift * (angles[1] - angles[0]))


def estimate_angle(vms: list[VirtualMatrix], arr: ArrayGeometry, fc: float,
                   grid_deg: float = 0.1):
    """Array-native arrival angle per tag, combined across tags.

    Scans (-90 deg, 90 deg).  When several subspace peaks survive, the one
    with the strongest conventional beampower is taken as the direct path
    (multipath ghosts carry less energy).  Tags are combined by the
    harmonic mean of their angles; near zero or with mixed signs the
    harmonic mean is ill-conditioned, so the arithmetic mean substitutes.
    """
    step = np.deg2rad(grid_deg)
    angles = np.arange(-np.pi / 2 + step, np.pi / 2, step)
    per_tag = []
    degraded_any = False
    for vm in vms:
        music, bartlett, _, degraded = subspace_spectrum(vm, arr, fc, angles)
        degraded_any = degraded_any or degraded
        spec = bartlett if degraded else music
        peaks = [i for i in range(1, len(spec) - 1)
                 if spec[i] >= spec[i - 1] and spec[i] > spec[i + 1]]
        if not peaks:
            peaks = [int(np.argmax(spec))]
        best = max(peaks, key=lambda i: bartlett[i])
        per_tag.append(_refine_peak(angles, spec, best))
    per_tag = np.asarray(per_tag)
    if np.all(per_tag > np.deg2rad(2.0)) or np.all(per_tag < -np.deg2rad(2.0)):
        combined = len(per_tag) / np.sum(1.0 / per_tag)
    else:
        combined = float(np.mean(per_tag))
    return per_tag, float(combined), degraded_any


def elevation_from_barometer(h: float, d: float) -> tuple[float, bool]:
    """Polar angle of the vehicle seen from the charger; h is height above it.

    Returns (xi, clamped).  Noise can push h slightly beyond d; the ratio
    is clamped and flagged rather than rejected.
    """
    if d <= 0:
        raise ValueError("range must be positive")
    ratio = h / d
    clamped = not (-1.0 <= ratio <= 1.0)
    return float(np.arccos(np.clip(ratio, -1.0, 1.0))), clamped


def assemble_direction(native_angle: float, xi: float):
    """World-frame unit direction from the array-native angle and elevation.

    The y-axis array measures u_y through sin(native) = -u_y; the azimuth
    follows from u_y = sin(azimuth) sin(xi).  Out-of-half-plane geometry
    (|u_y| > sin xi) is clamped and flagged.
    """
    s_xi = np.sin(xi)
    u_y = -np.sin(native_angle)
    if s_xi < 1e-6:
        return 0.0, np.array([0.0, 0.0, np.cos(xi)]), True
    ratio = u_y / s_xi
    clamped = not (-1.0 <= ratio <= 1.0)
    phi = float(np.arcsin(np.clip(ratio, -1.0, 1.0)))
    a = np.array([np.cos(phi) * s_xi, np.sin(phi) * s_xi, np.cos(xi)])
    return phi, a / np.linalg.norm(a), clamped


def rotation_gain(omega: float, xi: float, layout: TagLayout, fc: float) -> float:
    """Signed amplitude of the rotational shift: (fc D / 2c) * omega * sin(xi)."""
    return fc * layout.diameter / (2.0 * SPEED_OF_LIGHT) * omega * np.sin(xi)


def estimate_rotation(db1_hz: float, db2_hz: float, phi_p: float, omega: float,
                      layout: TagLayout, fc: float, xi: float = np.pi / 2,
                      sigma_b_hz: float = 0.0):
    """Yaw from the two pair bin differences.

    phi_p is the world azimuth of the propagation direction (vehicle toward
    charger).  Pair 1 (body x) follows dfr1 = A sin(phi_p - psi); the
    orthogonal pair obeys the same law a quarter turn later, dfr2 =
    -A cos(phi_p - psi), so the joint atan2 inversion resolves the arcsine
    ambiguity of either pair alone.  Returns (psi, sigma_psi, ok); ok is
    False when |omega| or the gain is too small to observe rotation.
    """
    gain = rotation_gain(omega, xi, layout, fc)
    if abs(omega) < OMEGA_MIN or abs(gain) < GATE_FACTOR * sigma_b_hz:
        return None, np.inf, False
    dfr1 = 0.5 * db1_hz
    dfr2 = 0.5 * db2_hz
    psi = wrap_phase(phi_p - np.arctan2(dfr1 / gain, -dfr2 / gain))
    sigma = (0.5 * sigma_b_hz) / abs(gain) if sigma_b_hz > 0 else 0.0
    radius = float(np.hypot(dfr1, dfr2) / abs(gain))
    if radius > 1.3:
        sigma *= radius  # shift implies more rotation than the gyro allows
    return float(psi), float(sigma), True
