import numpy as np
import pytest

from chirpnav.rotations import (
    euler_zyx_from_quat,
    quat_angle_between,
    quat_conjugate,
    quat_from_euler_zyx,
    quat_from_rotvec,
    quat_from_yaw,
    quat_identity,
    quat_left,
    quat_multiply,
    quat_normalize,
    quat_right,
    quat_rotate,
    quat_to_matrix,
    replace_yaw,
    rotvec_from_quat,
    skew,
    wrap_angle,
    yaw_of,
)


def random_quats(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def test_identity_and_conjugate():
    q = quat_identity()
    assert q.tolist() == [1.0, 0.0, 0.0, 0.0]
    for p in random_quats(20, seed=1):
        qq = quat_multiply(p, quat_conjugate(p))
        np.testing.assert_allclose(qq, quat_identity(), atol=1e-12)


def test_multiply_matches_matrix_composition():
    for a, b in zip(random_quats(25, seed=2), random_quats(25, seed=3)):
        left = quat_to_matrix(quat_multiply(a, b))
        right = quat_to_matrix(a) @ quat_to_matrix(b)
        np.testing.assert_allclose(left, right, atol=1e-12)


def test_rotate_matches_matrix():
    rng = np.random.default_rng(4)
    for q in random_quats(25, seed=5):
        v = rng.standard_normal(3)
        np.testing.assert_allclose(quat_rotate(q, v), quat_to_matrix(q) @ v,
                                   atol=1e-12)


def test_rotvec_round_trip():
    rng = np.random.default_rng(6)
    for _ in range(50):
        phi = rng.uniform(-2.5, 2.5, size=3)
        back = rotvec_from_quat(quat_from_rotvec(phi))
        # rotvec is only unique modulo 2 pi about the axis
        np.testing.assert_allclose(
            quat_to_matrix(quat_from_rotvec(back)),
            quat_to_matrix(quat_from_rotvec(phi)), atol=1e-9)


def test_small_angle_rotvec():
    phi = np.array([1e-9, -2e-9, 3e-10])
    q = quat_from_rotvec(phi)
    np.testing.assert_allclose(q[1:], phi / 2.0, rtol=1e-6)
    np.testing.assert_allclose(rotvec_from_quat(q), phi, rtol=1e-6)


def test_hygiene_after_long_chain():
    # repeated multiplication with normalization stays unit to 1e-9
    q = quat_identity()
    step = quat_from_rotvec(np.array([0.011, -0.007, 0.019]))
    for _ in range(2000):
        q = quat_normalize(quat_multiply(q, step))
    assert abs(np.linalg.norm(q) - 1.0) < 1e-9


def test_left_right_product_matrices():
    for a, b in zip(random_quats(20, seed=7), random_quats(20, seed=8)):
        ref = quat_multiply(a, b)
        np.testing.assert_allclose(quat_left(a) @ b, ref, atol=1e-12)
        np.testing.assert_allclose(quat_right(b) @ a, ref, atol=1e-12)


@pytest.mark.parametrize("yaw", [-3.0, -0.5, 0.0, 0.25, 1.7, 3.1])
def test_yaw_round_trip(yaw):
    assert yaw_of(quat_from_yaw(yaw)) == pytest.approx(yaw, abs=1e-12)


def test_euler_round_trip():
    rng = np.random.default_rng(9)
    for _ in range(30):
        r, p, y = rng.uniform(-1.2, 1.2, size=3)
        rr, pp, yy = euler_zyx_from_quat(quat_from_euler_zyx(r, p, y))
        np.testing.assert_allclose([rr, pp, yy], [r, p, y], atol=1e-10)


def test_replace_yaw_keeps_roll_pitch():
    q = quat_from_euler_zyx(0.2, -0.3, 1.1)
    q2 = replace_yaw(q, -2.4)
    r, p, y = euler_zyx_from_quat(q2)
    np.testing.assert_allclose([r, p], [0.2, -0.3], atol=1e-10)
    assert y == pytest.approx(-2.4, abs=1e-10)


def test_wrap_angle():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    xs = np.linspace(-20.0, 20.0, 401)
    w = wrap_angle(xs)
    assert np.all(w > -np.pi - 1e-12) and np.all(w <= np.pi + 1e-12)
    np.testing.assert_allclose(np.cos(w), np.cos(xs), atol=1e-12)
    np.testing.assert_allclose(np.sin(w), np.sin(xs), atol=1e-12)


def test_skew_is_cross_product():
    rng = np.random.default_rng(10)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-12)
    np.testing.assert_allclose(skew(a).T, -skew(a), atol=1e-15)


def test_angle_between():
    a = quat_from_yaw(0.3)
    b = quat_from_yaw(0.3 + 0.5)
    assert quat_angle_between(a, b) == pytest.approx(0.5, abs=1e-10)
    # q and -q are the same rotation
    assert quat_angle_between(a, -a) == pytest.approx(0.0, abs=1e-7)
