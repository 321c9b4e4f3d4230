import numpy as np
import pytest

from chirpnav.channel import ArrayGeometry
from chirpnav.constants import NUM_CHANNELS, SPEED_OF_LIGHT as C, \
    channel_center_hz
from chirpnav.phase import NoSignalError, PhaseSet, wrap_phase
from chirpnav.scene import TagLayout
from chirpnav.sensing import (
    PoseFeature,
    VirtualMatrix,
    assemble_direction,
    elevation_from_barometer,
    estimate_angle,
    estimate_range,
    estimate_rotation,
    rotation_gain,
    stitched_profile,
    subspace_spectrum,
)

FREQS = [channel_center_hz(ch) for ch in range(NUM_CHANNELS)]
ARR = ArrayGeometry(n_antennas=3)
LAYOUT = TagLayout()


def phase_set_for_range(r_m, n_antennas=3, weight=None):
    tau = 2.0 * r_m / C
    theta = np.tile(wrap_phase(-2 * np.pi * np.asarray(FREQS) * tau),
                    (n_antennas, 1))
    if weight is None:
        weight = np.ones_like(theta)
    return PhaseSet(0, theta, weight)


def test_range_recovery_single_path():
    d, prof = estimate_range(phase_set_for_range(10.0), FREQS)
    assert d == pytest.approx(10.0, abs=0.05)
    assert prof.direct_delay_s == pytest.approx(2 * 10.0 / C, rel=5e-3)


def test_range_sweep_accuracy_and_monotonicity():
    ests = []
    for r in range(1, 51):
        d, _ = estimate_range(phase_set_for_range(float(r)), FREQS)
        assert d == pytest.approx(r, abs=0.3)
        ests.append(d)
    assert np.all(np.diff(ests) > 0)


def test_range_two_path_picks_earliest():
    # direct at 10 m plus a half-amplitude ghost at 25 m
    tau1, tau2 = 2 * 10.0 / C, 2 * 25.0 / C
    f = np.asarray(FREQS)
    phasor = np.exp(-2j * np.pi * f * tau1) + 0.5 * np.exp(-2j * np.pi * f * tau2)
    theta = np.tile(np.angle(phasor), (3, 1))
    ps = PhaseSet(0, theta, np.ones_like(theta))
    d, prof = estimate_range(ps, FREQS)
    assert d == pytest.approx(10.0, abs=0.3)
    # the ghost is present further out in the profile
    r_axis = C * prof.delays_s / 2
    ghost = prof.magnitude[(r_axis > 20) & (r_axis < 30)]
    assert np.max(ghost) > 0.05 * np.max(prof.magnitude)


def test_range_zero_phase_means_zero_delay():
    theta = np.zeros((3, NUM_CHANNELS))
    prof = stitched_profile(PhaseSet(0, theta, np.ones_like(theta)), FREQS)
    assert prof.direct_delay_s < prof.delays_s[1]


def test_range_needs_enough_channels():
    weight = np.ones((3, NUM_CHANNELS))
    weight[:, 7:] = 0.0  # 7 channels left
    with pytest.raises(NoSignalError):
        stitched_profile(phase_set_for_range(10.0, weight=weight), FREQS)
    # 8 channels is accepted
    weight = np.ones((3, NUM_CHANNELS))
    weight[:, 8:] = 0.0
    stitched_profile(phase_set_for_range(10.0, weight=weight), FREQS)


def test_range_freq_list_must_match():
    with pytest.raises(ValueError):
        stitched_profile(phase_set_for_range(10.0), FREQS[:-1])


def vm_single_path(native_rad, rng=None, gain=1.0, n_snap=NUM_CHANNELS):
    m = np.arange(ARR.n_antennas)
    s = np.exp(-1j * ARR.eta(900e6) * m * np.sin(native_rad))
    common = np.ones(n_snap) if rng is None else \
        np.exp(2j * np.pi * rng.uniform(size=n_snap))
    entries = gain * np.outer(s, common)
    return entries


def test_music_single_path_exact():
    for deg in (0.0, 30.0, -47.5, 60.0):
        rng = np.random.default_rng(3)
        vm = VirtualMatrix(vm_single_path(np.deg2rad(deg), rng),
                           np.ones(NUM_CHANNELS))
        per_tag, combined, degraded = estimate_angle([vm], ARR, 900e6)
        assert not degraded
        tol = 0.1 if deg == 0.0 else 0.5
        assert np.rad2deg(per_tag[0]) == pytest.approx(deg, abs=tol)
        assert np.rad2deg(combined) == pytest.approx(deg, abs=tol)


def test_music_two_path_takes_stronger():
    rng = np.random.default_rng(5)
    entries = (vm_single_path(np.deg2rad(20.0), rng)
               + vm_single_path(np.deg2rad(-40.0), rng, gain=0.501))
    vm = VirtualMatrix(entries, np.ones(NUM_CHANNELS))
    per_tag, _, degraded = estimate_angle([vm], ARR, 900e6)
    assert not degraded
    assert np.rad2deg(per_tag[0]) == pytest.approx(20.0, abs=2.0)


def test_subspace_degrades_with_one_snapshot():
    vm = VirtualMatrix(vm_single_path(np.deg2rad(10.0), n_snap=1),
                       np.ones(1))
    angles = np.deg2rad(np.arange(-89.9, 90.0, 0.1))
    music, bartlett, _, degraded = subspace_spectrum(vm, ARR, 900e6, angles)
    assert degraded
    assert music is None
    # Bartlett still points the right way
    assert np.rad2deg(angles[np.argmax(bartlett)]) == pytest.approx(10.0,
                                                                    abs=1.0)


def test_subspace_needs_some_weight():
    vm = VirtualMatrix(vm_single_path(0.0), np.zeros(NUM_CHANNELS))
    with pytest.raises(NoSignalError):
        subspace_spectrum(vm, ARR, 900e6, np.deg2rad(np.arange(-80, 80, 1.0)))


def test_angle_combination_harmonic_vs_mean():
    rng = np.random.default_rng(9)
    vms = [VirtualMatrix(vm_single_path(np.deg2rad(a), rng),
                         np.ones(NUM_CHANNELS))
           for a in (10.0, 10.0, 10.0, 20.0)]
    _, combined, _ = estimate_angle(vms, ARR, 900e6)
    harm = 4.0 / np.sum(1.0 / np.deg2rad(np.array([10.0, 10.0, 10.0, 20.0])))
    assert combined == pytest.approx(harm, abs=np.deg2rad(0.2))
    # straddling zero falls back to the arithmetic mean
    vms = [VirtualMatrix(vm_single_path(np.deg2rad(a), rng),
                         np.ones(NUM_CHANNELS))
           for a in (-1.0, 1.0, -1.0, 1.0)]
    _, combined, _ = estimate_angle(vms, ARR, 900e6)
    assert abs(np.rad2deg(combined)) < 0.5


def test_elevation_from_barometer():
    xi, clamped = elevation_from_barometer(0.0, 10.0)
    assert xi == pytest.approx(np.pi / 2) and not clamped
    xi, clamped = elevation_from_barometer(10.0, 10.0)
    assert xi == pytest.approx(0.0) and not clamped
    xi, clamped = elevation_from_barometer(5.0, 10.0)
    assert xi == pytest.approx(np.pi / 3) and not clamped
    xi, clamped = elevation_from_barometer(10.5, 10.0)
    assert xi == pytest.approx(0.0) and clamped
    with pytest.raises(ValueError):
        elevation_from_barometer(1.0, 0.0)


def test_assemble_direction_cases():
    phi, a, clamped = assemble_direction(np.deg2rad(-30.0), np.pi / 2)
    assert np.rad2deg(phi) == pytest.approx(30.0)
    np.testing.assert_allclose(a, [np.cos(np.pi / 6), 0.5, 0.0], atol=1e-12)
    assert not clamped
    # elevation folds in: same native angle, 60 deg polar
    phi2, a2, _ = assemble_direction(np.deg2rad(-30.0), np.pi / 3)
    assert a2[1] == pytest.approx(0.5)
    assert a2[2] == pytest.approx(np.cos(np.pi / 3))
    assert np.linalg.norm(a2) == pytest.approx(1.0)
    assert phi2 > phi  # shallower elevation needs more azimuth for same u_y
    # nearly vertical: direction degenerates to straight up
    phi3, a3, clamped3 = assemble_direction(0.3, 1e-9)
    assert clamped3
    np.testing.assert_allclose(a3, [0.0, 0.0, 1.0], atol=1e-6)
    # impossible u_y for the elevation: clamped
    _, _, clamped4 = assemble_direction(np.deg2rad(-80.0), np.deg2rad(30.0))
    assert clamped4


def test_assemble_direction_roundtrip():
    for phi in (-1.2, -0.3, 0.0, 0.7, 1.4):
        for xi in (np.pi / 2, 1.1, 0.6):
            u = np.array([np.cos(phi) * np.sin(xi), np.sin(phi) * np.sin(xi),
                          np.cos(xi)])
            native = -np.arcsin(u[1])
            phi_hat, a_hat, clamped = assemble_direction(native, xi)
            if clamped:
                continue
            assert phi_hat == pytest.approx(phi, abs=1e-9)
            np.testing.assert_allclose(a_hat, u, atol=1e-9)


def test_rotation_gain_value():
    g = rotation_gain(1.0, np.pi / 2, LAYOUT, 900e6)
    assert g == pytest.approx(900e6 * 0.66 / (2 * C), rel=1e-12)
    assert g == pytest.approx(0.99069, abs=1e-4)
    assert rotation_gain(1.0, np.pi / 6, LAYOUT, 900e6) == pytest.approx(
        0.5 * g)


def test_yaw_forward_inverse_grid():
    phi_p = 0.9
    omega = 1.0
    a = rotation_gain(omega, np.pi / 2, LAYOUT, 900e6)
    for psi in np.linspace(-np.pi + 1e-6, np.pi, 16):
        db1 = 2 * a * np.sin(phi_p - psi)
        db2 = -2 * a * np.cos(phi_p - psi)
        psi_hat, sigma, ok = estimate_rotation(db1, db2, phi_p, omega,
                                               LAYOUT, 900e6)
        assert ok and sigma == 0.0
        assert abs(wrap_phase(psi_hat - psi)) < 1e-9


def test_yaw_gates():
    psi_hat, sigma, ok = estimate_rotation(0.1, 0.1, 0.0, 0.05, LAYOUT, 900e6)
    assert psi_hat is None and sigma == np.inf and not ok
    # gain below the noise gate
    _, _, ok = estimate_rotation(0.1, 0.1, 0.0, 0.15, LAYOUT, 900e6,
                                 sigma_b_hz=0.12)
    assert not ok
    _, _, ok = estimate_rotation(0.1, 0.1, 0.0, 1.0, LAYOUT, 900e6,
                                 sigma_b_hz=0.12)
    assert ok


def test_yaw_sigma_and_radius_inflation():
    omega = 1.0
    a = rotation_gain(omega, np.pi / 2, LAYOUT, 900e6)
    phi_p, psi = 0.4, -0.8
    db1 = 2 * a * np.sin(phi_p - psi)
    db2 = -2 * a * np.cos(phi_p - psi)
    _, sigma, ok = estimate_rotation(db1, db2, phi_p, omega, LAYOUT, 900e6,
                                     sigma_b_hz=0.06)
    assert ok
    assert sigma == pytest.approx(0.5 * 0.06 / a, rel=1e-9)
    # doubled shifts imply twice the allowed rotation: sigma inflates
    _, sigma2, _ = estimate_rotation(2 * db1, 2 * db2, phi_p, omega, LAYOUT,
                                     900e6, sigma_b_hz=0.06)
    assert sigma2 == pytest.approx(2 * sigma, rel=1e-9)


def test_pose_feature_validation():
    a = np.array([1.0, 0.0, 0.0])
    PoseFeature(0.0, 5.0, a, None, 0.1, 0.01, np.inf)
    with pytest.raises(ValueError):
        PoseFeature(0.0, -5.0, a, None, 0.1, 0.01, 0.1)
    with pytest.raises(ValueError):
        PoseFeature(0.0, 5.0, np.array([1.0, 1.0, 0.0]), None, 0.1, 0.01, 0.1)
    with pytest.raises(ValueError):
        PoseFeature(0.0, 5.0, a, 4.0, 0.1, 0.01, 0.1)
