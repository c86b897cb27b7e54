import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cablelift import so3
from cablelift.so3 import EulerAngles


def _Rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _Ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _Rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


class TestRotationFromEuler:
    def test_zero_angles_identity(self):
        R = so3.rotation_from_euler(EulerAngles(0.0, 0.0, 0.0))
        np.testing.assert_allclose(R, np.eye(3), atol=1e-15)

    def test_matches_elementary_rotation_product(self):
        # oracle: explicit product of the three axis rotations
        ang = EulerAngles(math.pi / 2, 0.0, 0.0)
        R = so3.rotation_from_euler(ang)
        np.testing.assert_allclose(R, _Rz(ang.phi) @ _Ry(ang.theta) @ _Rx(ang.psi), atol=1e-14)

    def test_matches_elementary_product_on_random_angles(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            phi, theta, psi = rng.uniform(-math.pi, math.pi, 3)
            R = so3.rotation_from_euler(EulerAngles(phi, theta, psi))
            np.testing.assert_allclose(R, _Rz(phi) @ _Ry(theta) @ _Rx(psi), atol=1e-13)

    def test_orthonormality_100_random_triples(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            R = so3.rotation_from_euler(EulerAngles(*rng.uniform(-2 * math.pi, 2 * math.pi, 3)))
            np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)

    @given(
        st.floats(-10.0, 10.0),
        st.floats(-10.0, 10.0),
        st.floats(-10.0, 10.0),
    )
    @settings(max_examples=60)
    def test_determinant_is_one(self, phi, theta, psi):
        R = so3.rotation_from_euler(EulerAngles(phi, theta, psi))
        assert abs(np.linalg.det(R) - 1.0) < 1e-12

    def test_euler_round_trip_in_domain(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            ang = EulerAngles(
                rng.uniform(-math.pi / 2 + 0.01, math.pi / 2 - 0.01),
                rng.uniform(-math.pi / 2 + 0.01, math.pi / 2 - 0.01),
                rng.uniform(-math.pi, math.pi),
            )
            back = so3.euler_from_rotation(so3.rotation_from_euler(ang))
            assert abs(back.phi - ang.phi) < 1e-9
            assert abs(back.theta - ang.theta) < 1e-9
            assert abs(back.psi - ang.psi) < 1e-9


class TestEulerRateMatrix:
    def test_zero_angles_identity(self):
        np.testing.assert_allclose(
            so3.euler_rate_matrix(EulerAngles(0.0, 0.0, 0.0)), np.eye(3), atol=1e-15
        )

    def test_singularity_guard(self):
        with pytest.raises(so3.DomainError):
            so3.euler_rate_matrix(EulerAngles(0.0, math.pi / 2 - 1e-12, 0.0))

    def test_invertible_in_domain(self):
        # oracle: numpy matrix inverse
        rng = np.random.default_rng(3)
        for _ in range(50):
            ang = EulerAngles(
                rng.uniform(-1.4, 1.4), rng.uniform(-1.4, 1.4), rng.uniform(-math.pi, math.pi)
            )
            G = so3.euler_rate_matrix(ang)
            np.testing.assert_allclose(G @ np.linalg.inv(G), np.eye(3), atol=1e-9)

    def test_domain_flag(self):
        assert EulerAngles(0.3, -0.2, 3.0).in_domain
        assert not EulerAngles(1.6, 0.0, 0.0).in_domain
        assert not EulerAngles(0.0, -1.6, 0.0).in_domain


class TestHatVee:
    def test_basis_cross_product(self):
        e_x = np.array([1.0, 0.0, 0.0])
        e_y = np.array([0.0, 1.0, 0.0])
        e_z = np.array([0.0, 0.0, 1.0])
        np.testing.assert_allclose(so3.hat(e_z) @ e_x, e_y, atol=1e-15)

    def test_round_trip(self):
        v = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(so3.vee(so3.hat(v)), v, atol=1e-15)

    def test_matches_cross_product_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            v, w = rng.standard_normal(3), rng.standard_normal(3)
            np.testing.assert_allclose(so3.hat(v) @ w, np.cross(v, w), atol=1e-14)

    def test_vee_rejects_non_skew(self):
        with pytest.raises(so3.NotSkew):
            so3.vee(np.eye(3))

    @given(
        st.floats(-5.0, 5.0),
        st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=3),
        st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=3),
    )
    @settings(max_examples=60)
    def test_hat_is_linear(self, a, u, v):
        u, v = np.array(u), np.array(v)
        np.testing.assert_allclose(
            so3.hat(a * u + v), a * so3.hat(u) + so3.hat(v), atol=1e-12
        )


class TestQuaternions:
    def _random_unit_quat(self, rng):
        return so3.quat_normalize(rng.standard_normal(4))

    def test_mul_matches_rotation_composition(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            q1, q2 = self._random_unit_quat(rng), self._random_unit_quat(rng)
            R = so3.quat_to_rotation(so3.quat_mul(q1, q2))
            np.testing.assert_allclose(
                R, so3.quat_to_rotation(q1) @ so3.quat_to_rotation(q2), atol=1e-12
            )

    def test_quat_from_euler_matches_rotation_from_euler(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            ang = EulerAngles(*rng.uniform(-math.pi, math.pi, 3))
            np.testing.assert_allclose(
                so3.quat_to_rotation(so3.quat_from_euler(ang)),
                so3.rotation_from_euler(ang),
                atol=1e-12,
            )

    def test_exp_log_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            rv = rng.standard_normal(3)
            rv = rv / np.linalg.norm(rv) * rng.uniform(0.0, math.pi - 1e-3)
            np.testing.assert_allclose(so3.quat_log(so3.quat_exp(rv)), rv, atol=1e-10)

    def test_normalize_hemisphere(self):
        q = so3.quat_normalize(np.array([-0.5, 0.5, 0.5, 0.5]))
        assert q[0] >= 0.0
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12

    def test_batched_ops_match_loop(self):
        rng = np.random.default_rng(8)
        qs = so3.quat_normalize(rng.standard_normal((10, 4)))
        omegas = rng.standard_normal((10, 3))
        batched = so3.omega_to_quat_dot(qs, omegas)
        for i in range(10):
            np.testing.assert_allclose(batched[i], so3.omega_to_quat_dot(qs[i], omegas[i]))


class TestAttitudeErrorLog:
    def test_identical_rotations_zero(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            q = so3.quat_normalize(rng.standard_normal(4))
            np.testing.assert_array_equal(so3.attitude_error_log(q, q), np.zeros(3))

    def test_relative_z_rotation(self):
        # oracle: axis-angle construction of the relative rotation
        rng = np.random.default_rng(10)
        q_des = so3.quat_normalize(rng.standard_normal(4))
        q = so3.quat_mul(so3.quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), 0.3), q_des)
        np.testing.assert_allclose(
            so3.attitude_error_log(q, q_des), np.array([0.0, 0.0, 0.3]), atol=1e-12
        )

    def test_near_branch_cut(self):
        angle = math.pi - 1e-6
        q_des = so3.quat_identity()
        q = so3.quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), angle)
        err = so3.attitude_error_log(q, q_des)
        assert abs(np.linalg.norm(err) - angle) < 1e-9
        np.testing.assert_allclose(err / np.linalg.norm(err), [1.0, 0.0, 0.0], atol=1e-9)

    def test_norm_never_exceeds_pi(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            q = so3.quat_normalize(rng.standard_normal(4))
            q_des = so3.quat_normalize(rng.standard_normal(4))
            assert np.linalg.norm(so3.attitude_error_log(q, q_des)) <= math.pi + 1e-12


class TestLeftJacobianInverse:
    def test_matches_finite_difference(self):
        # oracle: central finite differences of log(Exp(a) Exp(b)) in a
        rng = np.random.default_rng(12)
        for _ in range(20):
            b = rng.standard_normal(3)
            b = b / np.linalg.norm(b) * rng.uniform(1e-4, 2.5)
            J = so3.left_jacobian_inverse(b)
            eps = 1e-6
            J_fd = np.zeros((3, 3))
            for k in range(3):
                da = np.zeros(3)
                da[k] = eps
                plus = so3.quat_log(so3.quat_mul(so3.quat_exp(da), so3.quat_exp(b)))
                minus = so3.quat_log(so3.quat_mul(so3.quat_exp(-da), so3.quat_exp(b)))
                J_fd[:, k] = (plus - minus) / (2 * eps)
            np.testing.assert_allclose(J, J_fd, atol=1e-6)
