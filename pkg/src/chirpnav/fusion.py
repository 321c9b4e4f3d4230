"""Sliding-window backscatter-inertial estimation.

States are (p, v, q) in a world frame anchored by the gauge: the first
window state's position and yaw are held fixed during each solve and the
charger position rho is a free parameter.  Between feature epochs the IMU
stream is preintegrated into relative (alpha, beta, gamma) terms with a
first-order 9x9 covariance, so re-linearizing a window never re-touches
raw samples.  The solver is damped Gauss-Newton on the stacked whitened
residuals with local (right-multiplied) attitude increments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import (
    quat_conjugate,
    quat_from_rotvec,
    quat_identity,
    quat_left,
    quat_multiply,
    quat_normalize,
    quat_right,
    quat_to_matrix,
    skew,
)
from .scene import ImuBatch, gravity_vector
from .sensing import PoseFeature

# picks the vector part of a quaternion product, d(quat)/d(rotvec) at identity
_E = np.vstack([np.zeros(3), np.eye(3)])
_PICK = np.hstack([np.zeros((3, 1)), np.eye(3)])


class NotReadyError(RuntimeError):
    """Raised when initialization lacks enough usable epochs."""


@dataclass
class NavState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).copy()
        self.v = np.asarray(self.v, dtype=float).copy()
        self.q = quat_normalize(np.asarray(self.q, dtype=float))

    def copy(self) -> "NavState":
        return NavState(self.p, self.v, self.q)


@dataclass(frozen=True)
class Preintegrated:
    alpha: np.ndarray     # relative displacement term, m
    beta: np.ndarray      # relative velocity term, m/s
    gamma: np.ndarray     # relative attitude quaternion
    dt: float
    cov: np.ndarray       # 9x9, order [alpha, beta, theta]

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("preintegration span must be positive")


def preintegrate(imu: ImuBatch, accel_sigma: float, gyro_sigma: float) -> Preintegrated:
    """Midpoint integration of one inter-epoch IMU segment.

    The attitude step is the exact quaternion exponential of the midpoint
    rate, so pure constant-rate rotation integrates without error.  The
    covariance treats each sample's noise as discrete white with the given
    per-sample sigmas.
    """
    n = len(imu)
    if n < 2:
        raise ValueError("need at least two samples to span an interval")
    alpha = np.zeros(3)
    beta = np.zeros(3)
    gamma = quat_identity()
    cov = np.zeros((9, 9))
    sa = max(accel_sigma, 1e-6) ** 2
    sg = max(gyro_sigma, 1e-6) ** 2
    r_i = np.eye(3)
    for i in range(n - 1):
        dt = float(imu.t[i + 1] - imu.t[i])
        if dt <= 0:
            raise ValueError("samples must be strictly time-ordered")
        w_mid = 0.5 * (imu.gyro[i] + imu.gyro[i + 1])
        gamma_next = quat_multiply(gamma, quat_from_rotvec(w_mid * dt))
        r_next = quat_to_matrix(gamma_next)
        a_mid = 0.5 * (r_i @ imu.acc[i] + r_next @ imu.acc[i + 1])
        c_mid = 0.5 * (imu.acc[i] + imu.acc[i + 1])

        f = np.eye(9)
        f[0:3, 3:6] = np.eye(3) * dt
        f[0:3, 6:9] = -r_i @ skew(c_mid) * (0.5 * dt * dt)
        f[3:6, 6:9] = -r_i @ skew(c_mid) * dt
        f[6:9, 6:9] = np.eye(3) - skew(w_mid) * dt
        g = np.zeros((9, 6))
        g[0:3, 0:3] = r_i * (0.5 * dt * dt)
        g[3:6, 0:3] = r_i * dt
        g[6:9, 3:6] = np.eye(3) * dt
        q_noise = np.diag([sa, sa, sa, sg, sg, sg])
        cov = f @ cov @ f.T + g @ q_noise @ g.T

        alpha = alpha + beta * dt + 0.5 * a_mid * dt * dt
        beta = beta + a_mid * dt
        gamma = quat_normalize(gamma_next)
        r_i = quat_to_matrix(gamma)
    cov = 0.5 * (cov + cov.T)
    return Preintegrated(alpha, beta, gamma,
                         float(imu.t[-1] - imu.t[0]), cov)


def imu_residual(s_k: NavState, s_k1: NavState, pre: Preintegrated,
                 g: np.ndarray | None = None, with_jacobian: bool = False):
    """9-vector [position, velocity, attitude] preintegration residual.

    Jacobians are returned against the local error state (dp, dv, dtheta)
    of each endpoint, attitude perturbed on the right: q <- q x dq(theta/2).
    """
    if g is None:
        g = gravity_vector()
    dt = pre.dt
    rk_t = quat_to_matrix(s_k.q).T
    r_p = rk_t @ (s_k1.p - s_k.p - s_k.v * dt + 0.5 * g * dt * dt) - pre.alpha
    r_v = rk_t @ (s_k1.v - s_k.v + g * dt) - pre.beta
    q_err = quat_multiply(quat_multiply(quat_conjugate(s_k.q), s_k1.q),
                          quat_conjugate(pre.gamma))
    r_th = 2.0 * q_err[1:]
    res = np.concatenate([r_p, r_v, r_th])
    if not with_jacobian:
        return res
    jk = np.zeros((9, 9))
    jk1 = np.zeros((9, 9))
    jk[0:3, 0:3] = -rk_t
    jk[0:3, 3:6] = -rk_t * dt
    jk[0:3, 6:9] = skew(r_p + pre.alpha)
    jk1[0:3, 0:3] = rk_t
    jk[3:6, 3:6] = -rk_t
    jk[3:6, 6:9] = skew(r_v + pre.beta)
    jk1[3:6, 3:6] = rk_t
    # attitude rows via product matrices: q_err = qk^-1 x qk1 x gamma^-1
    a = quat_multiply(quat_conjugate(s_k.q), s_k1.q)
    jk[6:9, 6:9] = -_PICK @ quat_right(quat_multiply(a, quat_conjugate(pre.gamma))) @ _E
    jk1[6:9, 6:9] = _PICK @ (
        quat_left(a) @ quat_right(quat_conjugate(pre.gamma))) @ _E
    return res, jk, jk1


def backscatter_residual(s: NavState, rho: np.ndarray, feat: PoseFeature,
                         q_hat: np.ndarray | None, with_jacobian: bool = False):
    """Feature residual: squared-range scalar, direction cross product,
    and (when a reference attitude is available) the attitude error vector.

    Returns (residual, row_sigmas) or (residual, row_sigmas, J_state, J_rho);
    the attitude block is simply absent when q_hat is None.
    """
    rho = np.asarray(rho, dtype=float)
    s_vec = s.p - rho
    val = feat.d ** 2 - float(s_vec @ s_vec)
    sign = 1.0 if val >= 0 else -1.0
    e_d = np.array([abs(val)])
    e_a = np.cross(feat.a, s_vec)
    rows = [e_d, e_a]
    sig = [np.array([2.0 * feat.d * max(feat.sigma_d, 1e-9)]),
           np.full(3, feat.d * max(feat.sigma_a, 1e-9))]
    if q_hat is not None:
        q_err = quat_multiply(quat_conjugate(q_hat), s.q)
        rows.append(2.0 * q_err[1:])
        s_rp = max(min(feat.sigma_psi, np.deg2rad(1.0)), 1e-9)
        sig.append(np.array([s_rp, s_rp, max(feat.sigma_psi, 1e-9)]))
    res = np.concatenate(rows)
    sigma = np.concatenate(sig)
    if not with_jacobian:
        return res, sigma
    n = res.shape[0]
    j_s = np.zeros((n, 9))
    j_rho = np.zeros((n, 3))
    j_s[0, 0:3] = -sign * 2.0 * s_vec
    j_rho[0, 0:3] = sign * 2.0 * s_vec
    ax = skew(feat.a)
    j_s[1:4, 0:3] = ax
    j_rho[1:4, 0:3] = -ax
    if q_hat is not None:
        j_s[4:7, 6:9] = _PICK @ quat_left(
            quat_multiply(quat_conjugate(q_hat), s.q)) @ _E
    return res, sigma, j_s, j_rho


@dataclass
class Window:
    """Optimization window: states, their epochs, factors, and the anchor."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    features: list = field(default_factory=list)     # PoseFeature or None
    q_refs: list = field(default_factory=list)       # attitude references or None
    preints: list = field(default_factory=list)      # len(states) - 1
    rho: np.ndarray = field(default_factory=lambda: np.zeros(3))
    n_max: int = 30

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).copy()

    def append(self, t, state, feature, q_ref, pre):
        if self.states:
            if pre is None:
                raise ValueError("non-first epochs need a preintegration")
            self.preints.append(pre)
        self.times.append(float(t))
        self.states.append(state)
        self.features.append(feature)
        self.q_refs.append(q_ref)

    def __len__(self):
        return len(self.states)

    @property
    def full(self) -> bool:
        return len(self.states) >= self.n_max


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    initial_cost: float
    final_cost: float
    costs: list
    wall_ms: float = 0.0


def _yaw_free_basis(q0: np.ndarray) -> np.ndarray:
    """(3, 2) basis of local attitude increments orthogonal to world yaw.

    A world-z rotation perturbs the local error state along R(q0)^T z;
    excluding that direction freezes the first state's yaw.
    """
    bz = quat_to_matrix(q0).T @ np.array([0.0, 0.0, 1.0])
    bz = bz / np.linalg.norm(bz)
    # two unit vectors completing an orthonormal triad with bz
    seed = np.array([1.0, 0.0, 0.0])
    if abs(bz @ seed) > 0.9:
        seed = np.array([0.0, 1.0, 0.0])
    b1 = np.cross(bz, seed)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(bz, b1)
    return np.column_stack([b1, b2])


def _whitener(cov: np.ndarray) -> np.ndarray:
    """Left square-root information factor: W r has unit covariance."""
    c = np.linalg.cholesky(cov + 1e-18 * np.eye(cov.shape[0]))
    return np.linalg.inv(c)


def _window_cost(win: Window, g: np.ndarray) -> float:
    cost = 0.0
    for i, pre in enumerate(win.preints):
        r = imu_residual(win.states[i], win.states[i + 1], pre, g)
        wr = _whitener(pre.cov) @ r
        cost += float(wr @ wr)
    for i, feat in enumerate(win.features):
        if feat is None:
            continue
        r, sigma = backscatter_residual(win.states[i], win.rho, feat,
                                        win.q_refs[i])
        wr = r / sigma
        cost += float(wr @ wr)
    return cost


def solve(win: Window, g: np.ndarray | None = None, max_iters: int = 20,
          tol: float = 1e-6, fix_yaw: bool | None = None) -> SolveReport:
    """Damped Gauss-Newton over all window states and the anchor.

    Parameter layout: state 0 contributes [v (3), theta (2 or 3)], every
    later state [p, v, theta] (9), then rho (3).  The first state's
    position is always held; its yaw is held too when fix_yaw is True, or
    by default when no attitude reference exists in the window (without
    one, common yaw is a gauge freedom).  With attitude measurements
    present the default frees it so they can correct the whole chain.
    Accepted steps never increase the cost; a step is halved up to 8
    times before the solver gives up.
    """
    if g is None:
        g = gravity_vector()
    n = len(win.states)
    if n < 2:
        raise NotReadyError("window needs at least two states")
    if fix_yaw is None:
        fix_yaw = not any(q is not None for q in win.q_refs)
    k0 = 2 if fix_yaw else 3
    dim = 3 + k0 + 9 * (n - 1) + 3
    rho_ofs = 3 + k0 + 9 * (n - 1)

    def state_cols(i):
        # (p_cols, v_cols, th_cols) spans in the parameter vector
        if i == 0:
            return None, slice(0, 3), slice(3, 3 + k0)
        base = 3 + k0 + 9 * (i - 1)
        return slice(base, base + 3), slice(base + 3, base + 6), \
            slice(base + 6, base + 9)

    cost = _window_cost(win, g)
    initial_cost = cost
    costs = [cost]
    iters = 0
    converged = False
    for _ in range(max_iters):
        iters += 1
        basis0 = _yaw_free_basis(win.states[0].q) if fix_yaw else np.eye(3)
        rows_r = []
        rows_j = []
        for i, pre in enumerate(win.preints):
            r, jk, jk1 = imu_residual(win.states[i], win.states[i + 1], pre, g,
                                      with_jacobian=True)
            w = _whitener(pre.cov)
            jrow = np.zeros((9, dim))
            for j, jac in ((i, jk), (i + 1, jk1)):
                pc, vc, tc = state_cols(j)
                if pc is not None:
                    jrow[:, pc] = jac[:, 0:3]
                jrow[:, vc] = jac[:, 3:6]
                th = jac[:, 6:9]
                jrow[:, tc] = th @ basis0 if j == 0 else th
            rows_r.append(w @ r)
            rows_j.append(w @ jrow)
        for i, feat in enumerate(win.features):
            if feat is None:
                continue
            r, sigma, j_s, j_rho = backscatter_residual(
                win.states[i], win.rho, feat, win.q_refs[i], with_jacobian=True)
            jrow = np.zeros((r.shape[0], dim))
            pc, vc, tc = state_cols(i)
            if pc is not None:
                jrow[:, pc] = j_s[:, 0:3]
            jrow[:, vc] = j_s[:, 3:6]
            th = j_s[:, 6:9]
            jrow[:, tc] = th @ basis0 if i == 0 else th
            jrow[:, rho_ofs:rho_ofs + 3] = j_rho
            rows_r.append(r / sigma)
            rows_j.append(jrow / sigma[:, None])
        r_all = np.concatenate(rows_r)
        j_all = np.vstack(rows_j)
        delta, *_ = np.linalg.lstsq(j_all, -r_all, rcond=None)

        step_ok = False
        scale = 1.0
        for _ in range(8):
            trial = _apply_step(win, delta * scale, basis0, state_cols, rho_ofs)
            trial_cost = _window_cost(trial, g)
            if trial_cost <= cost * (1.0 + 1e-12):
                step_ok = True
                break
            scale *= 0.5
        if not step_ok:
            break
        win.states = trial.states
        win.rho = trial.rho
        cost = trial_cost
        costs.append(cost)
        if float(np.max(np.abs(delta * scale))) < tol:
            converged = True
            break
    return SolveReport(iters, converged, initial_cost, cost, costs)


def _apply_step(win: Window, delta: np.ndarray, basis0, state_cols, rho_ofs):
    out = Window(times=list(win.times),
                 features=list(win.features), q_refs=list(win.q_refs),
                 preints=list(win.preints), rho=win.rho.copy(),
                 n_max=win.n_max)
    out.states = []
    for i, st in enumerate(win.states):
        pc, vc, tc = state_cols(i)
        p = st.p.copy() if pc is None else st.p + delta[pc]
        v = st.v + delta[vc]
        dth = basis0 @ delta[tc] if i == 0 else delta[tc]
        q = quat_normalize(quat_multiply(st.q, quat_from_rotvec(dth)))
        out.states.append(NavState(p, v, q))
    out.rho = win.rho + delta[rho_ofs:rho_ofs + 3]
    return out


def initialize(times, features, q_chains, preints, rho0=(0.0, 0.0, 0.0),
               n_max: int = 30) -> Window:
    """Seed a window from raw features and the IMU attitude chain.

    Positions come from rho + a*d per epoch (interpolated where a feature
    is missing), velocities from position differences, attitudes from the
    IMU chain.  Needs at least three epochs with range+angle.
    """
    k = len(times)
    if not (k == len(features) == len(q_chains)) or len(preints) != k - 1:
        raise ValueError("misaligned initialization inputs")
    good = [i for i, f in enumerate(features) if f is not None]
    if len(good) < 3:
        raise NotReadyError(f"only {len(good)} usable epochs, need 3")
    rho0 = np.asarray(rho0, dtype=float)
    pos = np.zeros((k, 3))
    for i in good:
        pos[i] = rho0 + features[i].a * features[i].d
    for i in range(k):
        if i in good:
            continue
        before = [j for j in good if j < i]
        after = [j for j in good if j > i]
        if before and after:
            j0, j1 = before[-1], after[0]
            lam = (times[i] - times[j0]) / (times[j1] - times[j0])
            pos[i] = (1 - lam) * pos[j0] + lam * pos[j1]
        else:
            pos[i] = pos[before[-1]] if before else pos[after[0]]
    vel = np.gradient(pos, np.asarray(times), axis=0) if k > 1 else np.zeros((k, 3))
    win = Window(n_max=n_max, rho=rho0)
    for i in range(k):
        st = NavState(pos[i], vel[i], q_chains[i])
        win.append(times[i], st, features[i], q_chains[i],
                   None if i == 0 else preints[i - 1])
    return win


def slide(win: Window, t, state: NavState, feature, q_ref,
          pre: Preintegrated) -> Window:
    """Drop the oldest epoch and append the new one.

    No marginalization prior is kept for the dropped state; the gauge
    re-anchors to the new first state (its position and yaw freeze at
    their current estimates), and rho carries over.
    """
    if not win.full:
        raise ValueError("slide called before the window is full")
    out = Window(times=win.times[1:], states=[s.copy() for s in win.states[1:]],
                 features=win.features[1:], q_refs=win.q_refs[1:],
                 preints=win.preints[1:], rho=win.rho.copy(), n_max=win.n_max)
    out.append(t, state, feature, q_ref, pre)
    return out


def dead_reckon(imu: ImuBatch, p0, v0, q0, g: np.ndarray | None = None):
    """Strapdown integration of a raw IMU stream from an initial state.

    Returns (t, positions) arrays.  Midpoint scheme matching preintegrate.
    """
    if g is None:
        g = gravity_vector()
    n = len(imu)
    p = np.asarray(p0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    q = quat_normalize(np.asarray(q0, dtype=float))
    out = np.zeros((n, 3))
    out[0] = p
    for i in range(n - 1):
        dt = float(imu.t[i + 1] - imu.t[i])
        w_mid = 0.5 * (imu.gyro[i] + imu.gyro[i + 1])
        q_next = quat_normalize(quat_multiply(q, quat_from_rotvec(w_mid * dt)))
        a_world = 0.5 * (quat_to_matrix(q) @ imu.acc[i]
                         + quat_to_matrix(q_next) @ imu.acc[i + 1]) - g
        p = p + v * dt + 0.5 * a_world * dt * dt
        v = v + a_world * dt
        q = q_next
        out[i + 1] = p
    return imu.t.copy(), out
