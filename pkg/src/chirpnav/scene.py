"""Ground-truth motion, tag geometry, and inertial/barometric synthesis.

World frame is right-handed with +z up.  The vehicle body frame has +x
through the nose; yaw is the rotation of body x about world z.  All
trajectory kinds below are closed-form in position, velocity, and
acceleration so synthesized sensors stay exactly consistent with the pose
they were sampled from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import GEAR_DIAMETER_M, GRAVITY, TAG_SHIFTS_HZ
from .rotations import quat_from_yaw, quat_to_matrix

TRAJECTORY_KINDS = ("stationary", "line", "circle", "square", "yaw_ramp")


@dataclass(frozen=True)
class RigidState:
    """Pose and its first derivatives at one instant.

    Attributes
    ----------
    t : time in seconds
    p : world position, m
    v : world velocity, m/s
    q : body-to-world attitude quaternion [w, x, y, z]
    omega : body-frame angular rate, rad/s
    a : world acceleration, m/s^2 (gravity not included)
    """

    t: float
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    a: np.ndarray


@dataclass(frozen=True)
class TagLayout:
    """Backscatter tags on the landing gear.

    Four tags sit on a ring of ``diameter`` meters, ordered as two opposed
    pairs: index 0/1 on the body +x/-x axis, index 2/3 on body +y/-y.  The
    two pair baselines are orthogonal by construction.
    """

    diameter: float = GEAR_DIAMETER_M
    shifts_hz: tuple = TAG_SHIFTS_HZ

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError("gear diameter must be positive")
        if len(self.shifts_hz) != 4 or len(set(self.shifts_hz)) != 4:
            raise ValueError("need four distinct tag shifts")

    @property
    def radius(self) -> float:
        return self.diameter / 2.0

    def body_offsets(self) -> np.ndarray:
        """(4, 3) tag positions in the body frame."""
        r = self.radius
        return np.array([
            [r, 0.0, 0.0],
            [-r, 0.0, 0.0],
            [0.0, r, 0.0],
            [0.0, -r, 0.0],
        ])

    # pair index -> (tag, opposed tag)
    pairs = ((0, 1), (2, 3))


@dataclass(frozen=True)
class ImuSample:
    t: float
    acc: np.ndarray   # body-frame specific force, m/s^2
    gyro: np.ndarray  # body-frame angular rate, rad/s


@dataclass
class ImuBatch:
    """Column-stacked IMU stream (convenience over a list of samples)."""

    t: np.ndarray
    acc: np.ndarray
    gyro: np.ndarray

    def between(self, t0: float, t1: float) -> "ImuBatch":
        """Samples with t0 < t <= t1 (plus the boundary sample at t0 if present)."""
        mask = (self.t > t0 - 1e-12) & (self.t <= t1 + 1e-12)
        return ImuBatch(self.t[mask], self.acc[mask], self.gyro[mask])

    def __len__(self) -> int:
        return self.t.shape[0]


@dataclass(frozen=True)
class MultipathRay:
    """One extra propagation path.

    ``excess_path_m`` is added to the direct round trip, ``gain`` scales the
    ray relative to the direct path's unit gain, and ``tags`` limits the ray
    to a subset of tag indices (None applies it to all four).
    """

    excess_path_m: float
    gain: complex = 0.5 + 0.0j
    tags: tuple | None = None

    def applies_to(self, tag: int) -> bool:
        return self.tags is None or tag in self.tags


@dataclass(frozen=True)
class NoiseProfile:
    """Disturbance magnitudes for a run; zeros give a noise-free world."""

    snr_db: float | None = None          # per-sample waveform SNR, None = noiseless
    phase_sigma_rad: float = 0.0         # channel-phase jitter (phase bypass mode)
    bin_sigma_hz: float = 0.0            # decoded-tone jitter (phase bypass mode)
    accel_sigma: float = 0.0             # per-sample accelerometer noise, m/s^2
    gyro_sigma: float = 0.0              # per-sample gyro noise, rad/s
    baro_sigma_m: float = 0.0
    cfo_hz: tuple = (0.0, 0.0, 0.0, 0.0)  # per-tag oscillator offset
    sigma_d_m: float = 0.0               # feature bypass mode: range noise
    sigma_a_rad: float = 0.0             # feature bypass mode: bearing noise
    sigma_psi_rad: float = 0.0           # feature bypass mode: yaw noise
    multipath: tuple = ()                # MultipathRay instances


@dataclass(frozen=True)
class Scenario:
    """A scripted flight in front of a stationary charger/array at rho.

    ``kind`` selects the closed-form trajectory; the geometry fields that a
    kind ignores are simply unused.  ``dropout_epochs`` marks feature epochs
    whose radio returns are suppressed (link-loss emulation).
    """

    kind: str = "circle"
    duration_s: float = 60.0
    speed_mps: float = 1.0
    rho_true: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    height_m: float = 2.0
    start_xy: tuple = (15.0, 0.0)
    center_xy: tuple = (15.0, 0.0)
    radius_m: float = 5.0
    side_m: float = 8.0
    heading0_rad: float = 0.0
    accel_mps2: float = 1.0
    turn_rate_rps: float = 0.8
    yaw_rate_floor_rps: float = 0.2
    yaw_rate_peak_rps: float = 1.5
    yaw_ramp_rate: float = 0.05
    imu_rate_hz: float = 100.0
    baro_rate_hz: float = 25.0
    tags: TagLayout = field(default_factory=TagLayout)
    dropout_epochs: tuple = ()

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if self.speed_mps < 0:
            raise ValueError("speed must be non-negative")


def _trapezoid_leg(length: float, speed: float, accel: float, tau: float):
    """Displacement, rate, accel along one straight leg at local time tau.

    The leg ramps 0 -> speed -> 0 with +-accel; short legs degrade to a
    triangular profile.  Returns the leg duration as the fourth element.
    """
    v = min(speed, np.sqrt(length * accel))
    ta = v / accel
    lc = length - v * ta  # cruise distance (0 for triangular)
    tc = lc / v if v > 0 else 0.0
    total = 2 * ta + tc
    tau = np.clip(tau, 0.0, total)
    if tau < ta:
        return 0.5 * accel * tau * tau, accel * tau, accel, total
    if tau < ta + tc:
        return 0.5 * accel * ta * ta + v * (tau - ta), v, 0.0, total
    td = tau - ta - tc
    s = 0.5 * accel * ta * ta + lc + v * td - 0.5 * accel * td * td
    return s, v - accel * td, -accel, total


def _square_schedule(sc: Scenario):
    _, _, _, t_leg = _trapezoid_leg(sc.side_m, sc.speed_mps, sc.accel_mps2, 0.0)
    t_turn = (np.pi / 2.0) / sc.turn_rate_rps
    return t_leg, t_turn, 4.0 * (t_leg + t_turn)


def sample_state(sc: Scenario, t: float) -> RigidState:
    """Analytic pose, velocity, and acceleration of the scenario at time t."""
    z = sc.height_m
    if sc.kind == "stationary":
        p = np.array([*sc.start_xy, z])
        return RigidState(t, p, np.zeros(3), quat_from_yaw(sc.heading0_rad),
                          np.zeros(3), np.zeros(3))

    if sc.kind == "line":
        d = np.array([np.cos(sc.heading0_rad), np.sin(sc.heading0_rad), 0.0])
        p = np.array([*sc.start_xy, z]) + sc.speed_mps * t * d
        return RigidState(t, p, sc.speed_mps * d, quat_from_yaw(sc.heading0_rad),
                          np.zeros(3), np.zeros(3))

    if sc.kind == "circle":
        r = sc.radius_m
        om = sc.speed_mps / r
        th = sc.heading0_rad + om * t
        c, s = np.cos(th), np.sin(th)
        p = np.array([sc.center_xy[0] + r * c, sc.center_xy[1] + r * s, z])
        v = sc.speed_mps * np.array([-s, c, 0.0])
        a = -r * om * om * np.array([c, s, 0.0])
        yaw = th + np.pi / 2.0  # nose along the tangent
        return RigidState(t, p, v, quat_from_yaw(yaw),
                          np.array([0.0, 0.0, om]), a)

    if sc.kind == "square":
        t_leg, t_turn, period = _square_schedule(sc)
        corners = [np.array([*sc.start_xy, z])]
        headings = [sc.heading0_rad + k * np.pi / 2.0 for k in range(4)]
        for h in headings:
            d = np.array([np.cos(h), np.sin(h), 0.0])
            corners.append(corners[-1] + sc.side_m * d)
        tau = np.mod(t, period)
        leg = int(tau // (t_leg + t_turn))
        leg = min(leg, 3)
        local = tau - leg * (t_leg + t_turn)
        h = headings[leg]
        d = np.array([np.cos(h), np.sin(h), 0.0])
        if local <= t_leg:
            s, sd, sdd, _ = _trapezoid_leg(sc.side_m, sc.speed_mps,
                                           sc.accel_mps2, local)
            p = corners[leg] + s * d
            return RigidState(t, p, sd * d, quat_from_yaw(h),
                              np.zeros(3), sdd * d)
        # turning in place at the corner toward the next heading
        tt = local - t_leg
        yaw = h + sc.turn_rate_rps * tt
        return RigidState(t, corners[leg + 1], np.zeros(3), quat_from_yaw(yaw),
                          np.array([0.0, 0.0, sc.turn_rate_rps]), np.zeros(3))

    # yaw_ramp: hover in place, spin rate ramping floor -> peak -> floor
    lo, hi, rate = sc.yaw_rate_floor_rps, sc.yaw_rate_peak_rps, sc.yaw_ramp_rate
    t_up = (hi - lo) / rate
    tau = min(t, 2.0 * t_up)
    if tau < t_up:
        om = lo + rate * tau
        yaw = sc.heading0_rad + lo * tau + 0.5 * rate * tau * tau
    else:
        td = tau - t_up
        om = hi - rate * td
        yaw = (sc.heading0_rad + lo * t_up + 0.5 * rate * t_up ** 2
               + hi * td - 0.5 * rate * td * td)
    if t > 2.0 * t_up:  # hold the floor rate afterwards
        om = lo
        yaw += lo * (t - 2.0 * t_up)
    p = np.array([*sc.start_xy, z])
    return RigidState(t, p, np.zeros(3), quat_from_yaw(yaw),
                      np.array([0.0, 0.0, om]), np.zeros(3))


def tag_world_positions(state: RigidState, layout: TagLayout) -> np.ndarray:
    """(4, 3) world positions of the tags for one vehicle state."""
    R = quat_to_matrix(state.q)
    return state.p[None, :] + layout.body_offsets() @ R.T


def tag_world_velocities(state: RigidState, layout: TagLayout) -> np.ndarray:
    """(4, 3) world velocities: v + q * (omega x r_tag)."""
    R = quat_to_matrix(state.q)
    spin = np.cross(state.omega[None, :], layout.body_offsets())
    return state.v[None, :] + spin @ R.T


def gravity_vector() -> np.ndarray:
    return np.array([0.0, 0.0, GRAVITY])


def ideal_imu(state: RigidState) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free specific force and body rate for one state."""
    R = quat_to_matrix(state.q)
    acc = R.T @ (state.a + gravity_vector())
    return acc, state.omega.copy()


def synth_imu(sc: Scenario, rng: np.random.Generator,
              t_start: float = 0.0, t_end: float | None = None) -> ImuBatch:
    """Sample the inertial unit along the trajectory at its configured rate."""
    if t_end is None:
        t_end = sc.duration_s
    dt = 1.0 / sc.imu_rate_hz
    n = int(round((t_end - t_start) / dt))
    t = t_start + dt * np.arange(n + 1)
    acc = np.empty((n + 1, 3))
    gyro = np.empty((n + 1, 3))
    for i, ti in enumerate(t):
        st = sample_state(sc, float(ti))
        acc[i], gyro[i] = ideal_imu(st)
    if sc.noise.accel_sigma > 0:
        acc = acc + rng.normal(scale=sc.noise.accel_sigma, size=acc.shape)
    if sc.noise.gyro_sigma > 0:
        gyro = gyro + rng.normal(scale=sc.noise.gyro_sigma, size=gyro.shape)
    return ImuBatch(t, acc, gyro)


def synth_baro(sc: Scenario, rng: np.random.Generator,
               t_start: float = 0.0, t_end: float | None = None):
    """(t, h) barometric height samples; h is world z plus noise."""
    if t_end is None:
        t_end = sc.duration_s
    dt = 1.0 / sc.baro_rate_hz
    n = int(round((t_end - t_start) / dt))
    t = t_start + dt * np.arange(n + 1)
    h = np.array([sample_state(sc, float(ti)).p[2] for ti in t])
    if sc.noise.baro_sigma_m > 0:
        h = h + rng.normal(scale=sc.noise.baro_sigma_m, size=h.shape)
    return t, h
