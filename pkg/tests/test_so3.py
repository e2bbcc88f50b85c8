import numpy as np
import pytest

from mcfproto import so3


def rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def test_decode_identity():
    R = so3.decode_6d(np.array([1.0, 0, 0, 0, 1.0, 0]))
    assert np.allclose(R, np.eye(3))


def test_decode_gram_schmidt_quotient():
    # scaling a1 and adding a1-components to a2 are removed by the decode
    R = so3.decode_6d(np.array([2.0, 0, 0, 1.0, 1.0, 0]))
    assert np.allclose(R, np.eye(3))


def test_decode_random_sweep_valid_rotations():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(1000, 6))
    R = so3.decode_6d(p)
    assert so3.is_rotation(R, tol=1e-9)


def test_decode_quotient_invariance_sweep():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        p = rng.normal(size=6)
        scale = rng.uniform(0.1, 10.0)
        shift = rng.uniform(-2.0, 2.0)
        q = np.concatenate([scale * p[:3], p[3:] + shift * p[:3]])
        assert np.abs(so3.decode_6d(p) - so3.decode_6d(q)).max() < 1e-9


def test_decode_degenerate():
    with pytest.raises(so3.DegenerateParamError):
        so3.decode_6d(np.zeros(6))
    with pytest.raises(so3.DegenerateParamError):
        so3.decode_6d(np.array([1.0, 0, 0, 2.0, 0, 0]))


def test_geodesic_cos_values():
    R = so3.random_rotation(np.random.default_rng(2))
    assert so3.geodesic_cos(R, R) == pytest.approx(1.0)
    assert so3.geodesic_cos(np.eye(3), rot_z(np.pi / 2)) == pytest.approx(0.0)
    flip = so3.axis_angle_to_rotation(np.array([0, np.pi, 0.0]))
    assert so3.geodesic_cos(np.eye(3), flip) == pytest.approx(-1.0)


def test_smoothness_loss_values():
    R = so3.random_rotation(np.random.default_rng(3))
    assert so3.smoothness_loss(R, R) == pytest.approx(0.0)
    assert so3.smoothness_loss(np.eye(3), rot_z(np.pi / 2)) == pytest.approx(1.0)
    flip = so3.axis_angle_to_rotation(np.array([np.pi, 0, 0.0]))
    assert so3.smoothness_loss(np.eye(3), flip) == pytest.approx(2.0)


def test_smoothness_symmetric_and_left_invariant():
    rng = np.random.default_rng(4)
    for _ in range(50):
        Ra, Rb, Q = so3.random_rotation(rng, size=3)
        l_ab = so3.smoothness_loss(Ra, Rb)
        assert l_ab == pytest.approx(so3.smoothness_loss(Rb, Ra), abs=1e-12)
        assert l_ab == pytest.approx(so3.smoothness_loss(Q @ Ra, Q @ Rb), abs=1e-9)


def test_geodesic_cos_clamped_under_noise():
    rng = np.random.default_rng(5)
    for _ in range(100):
        R = so3.random_rotation(rng)
        noisy = R + rng.normal(0, 1e-7, (3, 3))
        c = so3.geodesic_cos(noisy, noisy)
        assert -1.0 <= c <= 1.0


def test_rotate_vec():
    assert np.allclose(so3.rotate_vec(np.eye(3), [1.0, 2, 3]), [1, 2, 3])
    assert np.allclose(so3.rotate_vec(rot_z(np.pi / 2), [1.0, 0, 0]), [0, 1, 0],
                       atol=1e-12)
    rng = np.random.default_rng(6)
    R = so3.random_rotation(rng)
    v = rng.normal(size=3)
    assert abs(np.linalg.norm(so3.rotate_vec(R, v)) - np.linalg.norm(v)) < 1e-12


def test_axis_angle():
    assert np.allclose(so3.axis_angle_to_rotation(np.zeros(3)), np.eye(3))
    assert np.allclose(so3.axis_angle_to_rotation(np.array([0, 0, np.pi / 2])),
                       rot_z(np.pi / 2), atol=1e-12)
    rng = np.random.default_rng(7)
    w = rng.normal(size=3)
    R = so3.axis_angle_to_rotation(w) @ so3.axis_angle_to_rotation(-w)
    assert np.abs(R - np.eye(3)).max() < 1e-10


def test_random_rotation_uniform_angle():
    # mean angle of the uniform-SO(3) distribution is pi/2 + 2/pi
    rng = np.random.default_rng(8)
    R = so3.random_rotation(rng, size=10000)
    tr = np.trace(R, axis1=-2, axis2=-1)
    angles = np.arccos(np.clip((tr - 1) / 2, -1, 1))
    expected = np.pi / 2 + 2 / np.pi
    assert abs(angles.mean() - expected) < 0.02


def test_encode_decode_roundtrip():
    rng = np.random.default_rng(9)
    R = so3.random_rotation(rng, size=20)
    assert np.abs(so3.decode_6d(so3.encode_6d(R)) - R).max() < 1e-12
