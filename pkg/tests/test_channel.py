import json

import numpy as np
import pytest

from chirpnav.channel import (
    ArrayGeometry,
    doppler_shift,
    dump_frame,
    load_frame,
    propagate,
    roundtrip_delays,
    tag_frequency_offsets,
)
from chirpnav.chirp import ChirpConfig, dechirp
from chirpnav.constants import SPEED_OF_LIGHT as C
from chirpnav.rotations import quat_from_yaw
from chirpnav.scene import Scenario, sample_state, tag_world_positions, \
    tag_world_velocities

CFG = ChirpConfig(sf=8, bw=125e3, fc=900e6, fs=500e3)


def test_doppler_shift_basics():
    u = np.array([1.0, 0.0, 0.0])
    dft, dfr = doppler_shift(u, np.array([3.0, 0.0, 0.0]),
                             np.array([0.0, 2.0, 0.0]), 900e6)
    assert dft == pytest.approx(900e6 * 3.0 / C)  # 9.006 Hz approaching
    assert dfr == 0.0  # perpendicular spin
    dft_away, _ = doppler_shift(-u, np.array([3.0, 0.0, 0.0]), np.zeros(3),
                                900e6)
    assert dft_away == pytest.approx(-9.00622, abs=1e-4)
    with pytest.raises(ValueError):
        doppler_shift(np.array([2.0, 0.0, 0.0]), np.zeros(3), np.zeros(3),
                      900e6)


def test_roundtrip_delays_geometry():
    sc = Scenario(kind="stationary", start_xy=(10.0, 0.0), height_m=2.0)
    st = sample_state(sc, 0.0)
    rho = np.zeros(3)
    arr = ArrayGeometry(n_antennas=3, spacing_m=0.16)
    taus = roundtrip_delays(st, sc.tags, rho, arr)
    assert taus.shape == (4, 3)
    pos = tag_world_positions(st, sc.tags)
    for i in range(4):
        d0 = np.linalg.norm(pos[i] - rho)
        u = (pos[i] - rho) / d0
        for m in range(3):
            # far-field: return leg shortens by the projected offset
            off = np.array([0.0, arr.spacing_m * m, 0.0])
            assert taus[i, m] * C == pytest.approx(2 * d0 - u @ off, rel=1e-12)


def test_adjacent_antenna_phase_is_steering():
    # carrier phase step between antennas encodes the arrival direction
    sc = Scenario(kind="stationary", start_xy=(12.0, 5.0))
    st = sample_state(sc, 0.0)
    arr = ArrayGeometry(n_antennas=3, spacing_m=0.16)
    taus = roundtrip_delays(st, sc.tags, np.zeros(3), arr)
    pos = tag_world_positions(st, sc.tags)
    for i in range(4):
        u = pos[i] / np.linalg.norm(pos[i])
        step = -2 * np.pi * 900e6 * (taus[i, 1] - taus[i, 0])
        assert step == pytest.approx(arr.eta(900e6) * u[1], rel=1e-9)
        step2 = -2 * np.pi * 900e6 * (taus[i, 2] - taus[i, 1])
        assert step2 == pytest.approx(step, rel=1e-9)


def test_broadside_sees_equal_delays():
    # charger along +x from the drone at equal height: u_y = 0
    sc = Scenario(kind="stationary", start_xy=(20.0, 0.0), height_m=0.0)
    st = sample_state(sc, 0.0)
    st.q[:] = quat_from_yaw(0.0)
    arr = ArrayGeometry(n_antennas=2, spacing_m=0.16)
    taus = roundtrip_delays(st, sc.tags, np.zeros(3), arr)
    for i in range(4):
        if abs(tag_world_positions(st, sc.tags)[i][1]) < 1e-9:
            assert abs(taus[i, 1] - taus[i, 0]) * C < 1e-9


def test_array_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry(n_antennas=1)
    with pytest.raises(ValueError):
        ArrayGeometry(n_antennas=3, spacing_m=0.0)
    with pytest.raises(ValueError):
        ArrayGeometry(layout="circular")
    assert ArrayGeometry().eta(900e6) == pytest.approx(
        2 * np.pi * 0.16 * 900e6 / C)


def test_propagate_power_and_parseval():
    sc = Scenario(kind="stationary", start_xy=(10.0, 0.0))
    st = sample_state(sc, 0.0)
    arr = ArrayGeometry(n_antennas=2)
    frame = propagate(CFG, 0, st, sc.tags, np.zeros(3), arr)
    assert frame.n_antennas == 2
    n = CFG.n_samples
    # superposition: the full frame is the sum of single-tag frames
    acc = np.zeros_like(frame.samples)
    for tag in range(4):
        mask = tuple(i == tag for i in range(4))
        single = propagate(CFG, 0, st, sc.tags, np.zeros(3), arr,
                           tag_mask=mask)
        # each periodic echo keeps unit modulus throughout
        np.testing.assert_allclose(np.abs(single.samples), 1.0, atol=1e-12)
        acc += single.samples
    np.testing.assert_allclose(acc, frame.samples, atol=1e-9)
    spec = dechirp(frame.antenna(0), CFG).spectrum
    # unit-modulus template: dechirped power equals received power
    np.testing.assert_allclose(np.sum(np.abs(spec) ** 2),
                               n * np.sum(np.abs(frame.samples[0]) ** 2),
                               rtol=1e-9)


def test_tag_mask_drops_echoes():
    sc = Scenario(kind="stationary", start_xy=(10.0, 0.0))
    st = sample_state(sc, 0.0)
    arr = ArrayGeometry(n_antennas=2)
    frame = propagate(CFG, 0, st, sc.tags, np.zeros(3), arr,
                      tag_mask=(True, False, False, False))
    assert np.sum(np.abs(frame.samples[0]) ** 2) == pytest.approx(
        CFG.n_samples, rel=1e-9)
    assert frame.tag_mask == (True, False, False, False)


def test_pair_average_cancels_rotation():
    # translation Doppler survives the pair average; rotation drops out
    sc = Scenario(kind="circle", speed_mps=1.0, radius_m=5.0)
    lay = sc.tags
    for om in (0.2, 0.8, 1.5):
        st = sample_state(sc, 1.0)
        st.omega[:] = (0.0, 0.0, om)
        offs = tag_frequency_offsets(st, lay, np.zeros(3), (0.0,) * 4, 900e6)
        u_p = -st.p / np.linalg.norm(st.p)
        dft, _ = doppler_shift(u_p, st.v, np.zeros(3), 900e6)
        avg01 = 0.5 * (offs[0] + offs[1]) - 0.5 * (lay.shifts_hz[0]
                                                   + lay.shifts_hz[1])
        avg23 = 0.5 * (offs[2] + offs[3]) - 0.5 * (lay.shifts_hz[2]
                                                   + lay.shifts_hz[3])
        assert avg01 == pytest.approx(dft, abs=1e-9)
        assert avg23 == pytest.approx(dft, abs=1e-9)


def test_pair_difference_is_twice_spin_doppler():
    sc = Scenario(kind="stationary", start_xy=(12.0, 3.0))
    st = sample_state(sc, 0.0)
    st.q[:] = quat_from_yaw(0.7)
    st.omega[:] = (0.0, 0.0, 1.1)
    lay = sc.tags
    offs = tag_frequency_offsets(st, lay, np.zeros(3), (0.0,) * 4, 900e6)
    vels = tag_world_velocities(st, lay)
    u_p = -st.p / np.linalg.norm(st.p)
    _, dfr0 = doppler_shift(u_p, st.v, vels[0] - st.v, 900e6)
    diff = (offs[0] - lay.shifts_hz[0]) - (offs[1] - lay.shifts_hz[1])
    assert diff == pytest.approx(2 * dfr0, abs=1e-9)


def test_cfo_adds_per_tag():
    sc = Scenario(kind="stationary")
    st = sample_state(sc, 0.0)
    base = tag_frequency_offsets(st, sc.tags, np.zeros(3), (0.0,) * 4, 900e6)
    shifted = tag_frequency_offsets(st, sc.tags, np.zeros(3),
                                    (210.0, -130.0, 55.0, -75.0), 900e6)
    np.testing.assert_allclose(shifted - base, [210.0, -130.0, 55.0, -75.0],
                               atol=1e-9)


def test_noise_requires_rng():
    sc = Scenario(kind="stationary")
    st = sample_state(sc, 0.0)
    with pytest.raises(ValueError):
        propagate(CFG, 0, st, sc.tags, np.zeros(3), ArrayGeometry(),
                  snr_db=10.0)


def test_frame_dump_load_roundtrip(tmp_path):
    sc = Scenario(kind="stationary", start_xy=(8.0, 1.0))
    st = sample_state(sc, 0.0)
    arr = ArrayGeometry(n_antennas=2)
    frame = propagate(CFG, 3, st, sc.tags, np.zeros(3), arr,
                      snr_db=10.0, rng=np.random.default_rng(5), t0=1.25,
                      tag_mask=(True, True, False, True))
    stem = tmp_path / "frame"
    dump_frame(frame, stem, seed=42)
    back = load_frame(stem)
    # float32 on disk
    np.testing.assert_allclose(back.samples, frame.samples, atol=1e-4)
    assert back.t0 == pytest.approx(1.25)
    assert back.fs == CFG.fs
    assert back.channel == 3
    assert back.tag_mask == (True, True, False, True)
    meta = json.loads((tmp_path / "frame.json").read_text())
    assert meta["n_samples"] == CFG.n_samples
    assert meta["seed"] == 42
