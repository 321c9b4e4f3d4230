"""Backscatter channel simulation: excitation -> tags -> antenna array.

Baseband-equivalent model.  The carrier is never synthesized; each tag's
contribution to antenna m on channel ch is an analytically delayed periodic
upchirp, rotated by the carrier phase exp(-j 2 pi f_ch tau) of its
round-trip delay, and frequency-offset by the tag shift, its oscillator
error, and the one-way Doppler of the tag's velocity.  Frequency offsets
follow the package-wide lag convention (a shift f multiplies the baseband
by exp(-j 2 pi f t)), which places both delay and Doppler on positive
dechirp bins.

Array model is far-field: the return-path length to antenna m is the
antenna-0 length minus u . (a_m - a_0) for arrival direction u.  Delay and
Doppler are frozen over one chirp (8 ms; motion effects within a chirp are
far below one bin).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chirp import ChirpConfig, IqBuffer, make_shifted_upchirp
from .constants import SPEED_OF_LIGHT
from .scene import MultipathRay, RigidState, TagLayout, tag_world_positions, tag_world_velocities


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear receive array anchored at the charger position.

    Antenna m sits at rho + m * spacing * e_y; antenna 0 is also the
    transmitter.  Only the linear layout is implemented.
    """

    n_antennas: int = 3
    spacing_m: float = 0.16
    layout: str = "linear"

    def __post_init__(self):
        if self.n_antennas < 2:
            raise ValueError("need at least 2 antennas")
        if self.spacing_m <= 0:
            raise ValueError("antenna spacing must be positive")
        if self.layout != "linear":
            raise ValueError("only the linear layout is supported")

    def eta(self, fc: float) -> float:
        """Steering constant 2 pi d fc / c."""
        return 2.0 * np.pi * self.spacing_m * fc / SPEED_OF_LIGHT

    def offsets(self) -> np.ndarray:
        """(M, 3) antenna offsets from the reference antenna."""
        out = np.zeros((self.n_antennas, 3))
        out[:, 1] = self.spacing_m * np.arange(self.n_antennas)
        return out


@dataclass
class RxFrame:
    """One chirp interval as seen by all antennas on one channel."""

    samples: np.ndarray   # (M, N) complex baseband
    fs: float
    t0: float
    channel: int
    tag_mask: tuple = (True, True, True, True)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=complex))

    @property
    def n_antennas(self) -> int:
        return self.samples.shape[0]

    def antenna(self, m: int) -> IqBuffer:
        return IqBuffer(self.samples[m], self.fs, self.t0)


def doppler_shift(u_p: np.ndarray, v_t: np.ndarray, v_r: np.ndarray,
                  fc: float) -> tuple[float, float]:
    """Translational and rotational Doppler for propagation direction u_p.

    u_p points from the vehicle toward the charger; a velocity component
    along u_p (approaching) yields a positive shift.
    """
    u_p = np.asarray(u_p, dtype=float)
    if abs(np.linalg.norm(u_p) - 1.0) > 1e-6:
        raise ValueError("u_p must be a unit vector")
    scale = fc / SPEED_OF_LIGHT
    return scale * float(u_p @ np.asarray(v_t, float)), \
        scale * float(u_p @ np.asarray(v_r, float))


def roundtrip_delays(state: RigidState, layout: TagLayout, rho: np.ndarray,
                     arr: ArrayGeometry) -> np.ndarray:
    """(4, M) round-trip delays charger -> tag -> antenna m, far-field.

    The outbound leg always starts at antenna 0 (the transmitter).
    """
    rho = np.asarray(rho, dtype=float)
    tags = tag_world_positions(state, layout)
    d0 = np.linalg.norm(tags - rho[None, :], axis=1)
    u = (tags - rho[None, :]) / d0[:, None]
    # return leg shortens by the projection of the antenna offset onto u
    proj = u @ arr.offsets().T                     # (4, M)
    return (d0[:, None] * 2.0 - proj) / SPEED_OF_LIGHT


def tag_frequency_offsets(state: RigidState, layout: TagLayout,
                          rho: np.ndarray, cfo_hz, fc: float) -> np.ndarray:
    """Per-tag total frequency offset f0 + CFO + Doppler, Hz.

    Doppler uses one common propagation direction (vehicle center to
    charger) for all four tags, so opposing-tag spin contributions cancel
    exactly in the pair average, but each tag keeps its own velocity.
    """
    rho = np.asarray(rho, dtype=float)
    u_p = rho - state.p
    u_p = u_p / np.linalg.norm(u_p)
    vels = tag_world_velocities(state, layout)
    out = np.empty(4)
    for i in range(4):
        spin = vels[i] - state.v
        dft, dfr = doppler_shift(u_p, state.v, spin, fc)
        out[i] = layout.shifts_hz[i] + float(cfo_hz[i]) + dft + dfr
    return out


def propagate(cfg: ChirpConfig, channel: int, state: RigidState,
              layout: TagLayout, rho, arr: ArrayGeometry,
              rays=(), cfo_hz=(0.0, 0.0, 0.0, 0.0), snr_db: float | None = None,
              rng: np.random.Generator | None = None,
              tag_mask=(True, True, True, True), t0: float = 0.0,
              cold_start: bool = False) -> RxFrame:
    """Simulate one chirp interval of backscatter at every antenna.

    cfg.fc must be the RF center of `channel`.  `rays` lists extra paths on
    top of the implicit unit-gain direct path; each ray shares the direct
    path's arrival direction (far-field scatterers near the line of
    sight).  cold_start=True models the first chirp after a channel hop:
    there is no previous symbol to bleed into the pre-arrival window.
    """
    n = cfg.n_samples
    taus = roundtrip_delays(state, layout, rho, arr)
    offsets = tag_frequency_offsets(state, layout, rho, cfo_hz, cfg.fc)
    all_rays = [MultipathRay(0.0, 1.0 + 0.0j, None)] + list(rays)
    out = np.zeros((arr.n_antennas, n), dtype=complex)
    for tag in range(4):
        if not tag_mask[tag]:
            continue
        for ray in all_rays:
            if not ray.applies_to(tag):
                continue
            extra = ray.excess_path_m / SPEED_OF_LIGHT
            for m in range(arr.n_antennas):
                tau = taus[tag, m] + extra
                buf = make_shifted_upchirp(
                    cfg, delay=tau, shift_hz=offsets[tag],
                    phase0=-2.0 * np.pi * cfg.fc * tau,
                    amplitude=1.0, periodic=not cold_start)
                out[m] += complex(ray.gain) * buf.samples
    if snr_db is not None:
        if rng is None:
            raise ValueError("noise requested but no rng supplied")
        sigma = 10.0 ** (-snr_db / 20.0)
        out += sigma * (rng.standard_normal(out.shape)
                        + 1j * rng.standard_normal(out.shape)) / np.sqrt(2.0)
    return RxFrame(out, cfg.fs, t0, channel, tuple(bool(b) for b in tag_mask))


def dump_frame(frame: RxFrame, stem: Path | str, seed: int | None = None):
    """Write raw I/Q to <stem>.bin plus a JSON sidecar <stem>.json.

    Layout: antennas concatenated; each antenna is interleaved float32
    I, Q, little-endian.
    """
    stem = Path(stem)
    m, n = frame.samples.shape
    inter = np.empty((m, 2 * n), dtype="<f4")
    inter[:, 0::2] = frame.samples.real
    inter[:, 1::2] = frame.samples.imag
    inter.tofile(stem.with_suffix(".bin"))
    meta = {
        "fs_hz": frame.fs,
        "t0_s": frame.t0,
        "channel": frame.channel,
        "n_antennas": m,
        "n_samples": n,
        "tag_mask": list(frame.tag_mask),
        "seed": seed,
    }
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=1))


def load_frame(stem: Path | str) -> RxFrame:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = np.fromfile(stem.with_suffix(".bin"), dtype="<f4")
    m, n = meta["n_antennas"], meta["n_samples"]
    raw = raw.reshape(m, 2 * n)
    samples = raw[:, 0::2].astype(float) + 1j * raw[:, 1::2].astype(float)
    return RxFrame(samples, meta["fs_hz"], meta["t0_s"], meta["channel"],
                   tuple(meta["tag_mask"]))
