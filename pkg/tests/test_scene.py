import numpy as np
import pytest

from chirpnav.constants import GRAVITY
from chirpnav.rotations import quat_conjugate, quat_multiply, quat_to_matrix, \
    rotvec_from_quat, yaw_of
from chirpnav.scene import (
    ImuBatch,
    MultipathRay,
    NoiseProfile,
    Scenario,
    TagLayout,
    gravity_vector,
    ideal_imu,
    sample_state,
    synth_baro,
    synth_imu,
    tag_world_positions,
    tag_world_velocities,
)


def fd_check(sc, ts):
    """Central-difference consistency of p/v and v/a along a trajectory."""
    h = 1e-4
    for t in ts:
        st = sample_state(sc, t)
        pp = sample_state(sc, t + h).p
        pm = sample_state(sc, t - h).p
        np.testing.assert_allclose((pp - pm) / (2 * h), st.v,
                                   atol=1e-4 * (1 + np.linalg.norm(st.v)))
        vp = sample_state(sc, t + h).v
        vm = sample_state(sc, t - h).v
        np.testing.assert_allclose((vp - vm) / (2 * h), st.a,
                                   atol=1e-3 * (1 + np.linalg.norm(st.a)))
        # body rate from the quaternion increment
        qp = sample_state(sc, t + h).q
        qm = sample_state(sc, t - h).q
        w = rotvec_from_quat(quat_multiply(quat_conjugate(qm), qp)) / (2 * h)
        np.testing.assert_allclose(w, st.omega,
                                   atol=1e-4 * (1 + np.linalg.norm(st.omega)))


def test_stationary_is_still():
    sc = Scenario(kind="stationary", duration_s=10.0)
    for t in (0.0, 3.3, 9.9):
        st = sample_state(sc, t)
        np.testing.assert_allclose(st.v, 0.0)
        np.testing.assert_allclose(st.a, 0.0)
        np.testing.assert_allclose(st.omega, 0.0)
        np.testing.assert_allclose(st.q, sample_state(sc, 0.0).q)


def test_circle_speed_and_centripetal():
    sc = Scenario(kind="circle", speed_mps=1.3, radius_m=4.0)
    for t in (0.0, 2.7, 11.1):
        st = sample_state(sc, t)
        assert np.linalg.norm(st.v) == pytest.approx(1.3, abs=1e-12)
        assert np.linalg.norm(st.a) == pytest.approx(1.3 ** 2 / 4.0, abs=1e-12)
        assert st.omega[2] == pytest.approx(1.3 / 4.0)
        # nose along the tangent
        heading = np.array([np.cos(yaw_of(st.q)), np.sin(yaw_of(st.q)), 0.0])
        np.testing.assert_allclose(heading * 1.3, st.v, atol=1e-9)


def test_kinematic_consistency_all_kinds():
    fd_check(Scenario(kind="circle", speed_mps=1.0), (0.5, 4.0, 17.3))
    fd_check(Scenario(kind="line", speed_mps=2.0, heading0_rad=0.6), (0.5, 9.0))
    fd_check(Scenario(kind="yaw_ramp"), (1.0, 13.0, 30.0, 55.0))
    # square: sample inside a leg cruise and inside a turn
    sq = Scenario(kind="square", speed_mps=1.0, side_m=8.0)
    fd_check(sq, (4.0,))


def test_yaw_ramp_rate_profile():
    sc = Scenario(kind="yaw_ramp", yaw_rate_floor_rps=0.2,
                  yaw_rate_peak_rps=1.5, yaw_ramp_rate=0.05, duration_s=60.0)
    t_up = (1.5 - 0.2) / 0.05  # 26 s each way
    assert sample_state(sc, 0.0).omega[2] == pytest.approx(0.2)
    assert sample_state(sc, t_up).omega[2] == pytest.approx(1.5)
    assert sample_state(sc, 2 * t_up).omega[2] == pytest.approx(0.2)
    assert sample_state(sc, 2 * t_up + 5.0).omega[2] == pytest.approx(0.2)
    # rate ramps linearly on the way up
    assert sample_state(sc, 10.0).omega[2] == pytest.approx(0.2 + 0.05 * 10)


def test_square_returns_to_start():
    sc = Scenario(kind="square", speed_mps=1.0, side_m=6.0, start_xy=(10.0, -2.0))
    from chirpnav.scene import _square_schedule
    _, _, period = _square_schedule(sc)
    st = sample_state(sc, period)
    np.testing.assert_allclose(st.p[:2], (10.0, -2.0), atol=1e-9)


def test_rejects_unknown_kind():
    with pytest.raises(ValueError):
        Scenario(kind="spiral")


def test_tag_layout_antisymmetry():
    lay = TagLayout()
    off = lay.body_offsets()
    np.testing.assert_allclose(off[0], -off[1])
    np.testing.assert_allclose(off[2], -off[3])
    assert np.linalg.norm(off[0]) == pytest.approx(lay.radius)
    # pair baselines orthogonal
    assert np.dot(off[0] - off[1], off[2] - off[3]) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        TagLayout(shifts_hz=(1e6, 1e6, 3e6, 4e6))


def test_tag_velocities_translation_only():
    sc = Scenario(kind="line", speed_mps=2.0)
    st = sample_state(sc, 3.0)
    vels = tag_world_velocities(st, sc.tags)
    for i in range(4):
        np.testing.assert_allclose(vels[i], st.v, atol=1e-12)


def test_tag_velocities_pure_yaw():
    sc = Scenario(kind="yaw_ramp")
    st = sample_state(sc, 5.0)
    lay = sc.tags
    vels = tag_world_velocities(st, lay)
    om = st.omega[2]
    for i in range(4):
        spin = vels[i] - st.v
        assert np.linalg.norm(spin) == pytest.approx(lay.radius * abs(om),
                                                     abs=1e-12)
    # opposing tags spin opposite
    np.testing.assert_allclose(vels[0] - st.v, -(vels[1] - st.v), atol=1e-12)


def test_tag_positions_on_ring():
    sc = Scenario(kind="circle")
    st = sample_state(sc, 2.0)
    pos = tag_world_positions(st, sc.tags)
    d = np.linalg.norm(pos - st.p[None, :], axis=1)
    np.testing.assert_allclose(d, sc.tags.radius, atol=1e-12)


def test_ideal_imu_stationary():
    sc = Scenario(kind="stationary", heading0_rad=0.0)
    acc, gyro = ideal_imu(sample_state(sc, 1.0))
    np.testing.assert_allclose(acc, [0.0, 0.0, GRAVITY], atol=1e-12)
    np.testing.assert_allclose(gyro, 0.0)


def test_ideal_imu_circle_specific_force():
    sc = Scenario(kind="circle", speed_mps=1.0, radius_m=5.0)
    st = sample_state(sc, 4.0)
    acc, gyro = ideal_imu(st)
    R = quat_to_matrix(st.q)
    np.testing.assert_allclose(R @ acc, st.a + gravity_vector(), atol=1e-12)
    np.testing.assert_allclose(gyro, st.omega)


def test_imu_double_integration_circle():
    # strapdown re-integration of the synthetic stream tracks truth
    sc = Scenario(kind="circle", speed_mps=1.0, radius_m=5.0, duration_s=5.0)
    imu = synth_imu(sc, np.random.default_rng(0))
    st0 = sample_state(sc, 0.0)
    from chirpnav.fusion import dead_reckon
    t, pos = dead_reckon(imu, st0.p, st0.v, st0.q)
    err = np.linalg.norm(pos[-1] - sample_state(sc, float(t[-1])).p)
    assert err < 1e-3


def test_synth_imu_grid_and_noise():
    sc = Scenario(kind="stationary", duration_s=2.0, imu_rate_hz=100.0,
                  noise=NoiseProfile(accel_sigma=0.05))
    imu = synth_imu(sc, np.random.default_rng(1))
    assert len(imu) == 201
    np.testing.assert_allclose(np.diff(imu.t), 0.01, atol=1e-12)
    dev = imu.acc - [0.0, 0.0, GRAVITY]
    assert np.std(dev) == pytest.approx(0.05, rel=0.1)
    np.testing.assert_allclose(imu.gyro, 0.0)


def test_imu_batch_between():
    t = np.arange(0.0, 1.01, 0.1)
    batch = ImuBatch(t, np.zeros((len(t), 3)), np.zeros((len(t), 3)))
    seg = batch.between(0.3, 0.7)
    np.testing.assert_allclose(seg.t, [0.3, 0.4, 0.5, 0.6, 0.7], atol=1e-12)


def test_baro_height():
    sc = Scenario(kind="stationary", height_m=2.5, duration_s=1.0)
    t, h = synth_baro(sc, np.random.default_rng(2))
    np.testing.assert_allclose(h, 2.5, atol=1e-12)
    assert len(t) == 26  # 25 Hz over 1 s inclusive
    noisy = Scenario(kind="stationary", height_m=2.5, duration_s=40.0,
                     noise=NoiseProfile(baro_sigma_m=0.1))
    _, hn = synth_baro(noisy, np.random.default_rng(3))
    assert np.std(hn - 2.5) == pytest.approx(0.1, rel=0.15)


def test_multipath_ray_tag_filter():
    ray = MultipathRay(2.0, 0.5 + 0j, tags=(1, 3))
    assert ray.applies_to(1) and ray.applies_to(3)
    assert not ray.applies_to(0)
    assert MultipathRay(2.0).applies_to(2)
