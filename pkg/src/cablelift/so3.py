"""Attitude representations and maps shared by every other module.

Conventions used across the stack:
  * world frame is z-up, rotation matrices map body coordinates to world,
  * quaternions are scalar-first [w, x, y, z] with the Hamilton product,
  * Euler angles (phi, theta, psi) follow the single fixed convention below
    and appear only at the config/log boundary.

Quaternion helpers broadcast over leading axes so trajectory batches can be
processed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

EPS = 1e-12
_GAMMA_GUARD = 1e-6  # singularity guard band around |theta| = pi/2


class DomainError(ValueError):
    """Angles outside the invertibility domain of the Euler-rate transform."""


class NotSkew(ValueError):
    """vee() received a matrix that is not skew-symmetric."""


@dataclass(frozen=True)
class EulerAngles:
    """Roll, pitch, yaw in radians."""

    phi: float
    theta: float
    psi: float

    @property
    def in_domain(self) -> bool:
        """True iff the Euler-rate transform is well defined and invertible."""
        return abs(self.phi) < math.pi / 2 and abs(self.theta) < math.pi / 2


def rotation_from_euler(angles: EulerAngles) -> np.ndarray:
    """Rotation matrix for the fixed Euler convention (defined for all angles).

    Equals the product of elementary rotations about z (phi), y (theta) and
    x (psi), written out entrywise.
    """
    cf, sf = math.cos(angles.phi), math.sin(angles.phi)
    ct, st = math.cos(angles.theta), math.sin(angles.theta)
    cp, sp = math.cos(angles.psi), math.sin(angles.psi)
    return np.array(
        [
            [cf * ct, cf * st * sp - cp * sf, cp * cf * st + sf * sp],
            [ct * sf, cf * cp + sf * st * sp, cp * sf * st - cf * sp],
            [-st, ct * sp, ct * cp],
        ]
    )


def euler_from_rotation(R: np.ndarray) -> EulerAngles:
    """Extract Euler angles from a rotation matrix; inverse of rotation_from_euler
    on the in-domain branch (|theta| < pi/2)."""
    theta = math.asin(-max(-1.0, min(1.0, R[2, 0])))
    phi = math.atan2(R[1, 0], R[0, 0])
    psi = math.atan2(R[2, 1], R[2, 2])
    return EulerAngles(phi, theta, psi)


def euler_rate_matrix(angles: EulerAngles) -> np.ndarray:
    """Matrix mapping body angular velocity to Euler-angle rates.

    Raises DomainError inside the guard band around the |theta| = pi/2
    singularity.
    """
    if abs(angles.theta) >= math.pi / 2 - _GAMMA_GUARD:
        raise DomainError(f"euler_rate_matrix singular near |theta|=pi/2: theta={angles.theta}")
    cf, sf = math.cos(angles.phi), math.sin(angles.phi)
    ct = math.cos(angles.theta)
    tt = math.tan(angles.theta)
    return np.array(
        [
            [1.0, sf * tt, cf * tt],
            [0.0, cf, -sf],
            [0.0, sf / ct, cf / ct],
        ]
    )


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix: hat(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=np.float64)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(S: np.ndarray) -> np.ndarray:
    """Inverse of hat. Requires ||S + S^T|| <= 1e-9."""
    S = np.asarray(S, dtype=np.float64)
    if np.linalg.norm(S + S.T) > 1e-9:
        raise NotSkew("vee() input is not skew-symmetric")
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors.

    Same arithmetic as np.cross but without its axis-juggling overhead,
    which dominates when called once per vector inside control loops.
    """
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def cross3_rows(A, B) -> np.ndarray:
    """Row-wise cross product over trailing-3 arrays (broadcasts like np.cross)."""
    a0, a1, a2 = A[..., 0], A[..., 1], A[..., 2]
    b0, b1, b2 = B[..., 0], B[..., 1], B[..., 2]
    out = np.empty(np.broadcast(a0, b0).shape + (3,))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


# ---------------------------------------------------------------------------
# quaternions (scalar-first, Hamilton product); broadcast over leading axes


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 * q2 (raw; no renormalization)."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    w1, x1, y1, z1 = q1[..., 0], q1[..., 1], q1[..., 2], q1[..., 3]
    w2, x2, y2, z2 = q2[..., 0], q2[..., 1], q2[..., 2], q2[..., 3]
    # grouping chosen so q * conj(q) has an exactly-zero vector part
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            (w1 * x2 + x1 * w2) + (y1 * z2 - z1 * y2),
            (w1 * y2 + y1 * w2) + (z1 * x2 - x1 * z2),
            (w1 * z2 + z1 * w2) + (x1 * y2 - y1 * x2),
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-normalize and pick the scalar >= 0 hemisphere."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    q = q / n
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_from_euler(angles: EulerAngles) -> np.ndarray:
    """Quaternion for the same convention as rotation_from_euler."""
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), angles.phi)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), angles.theta)
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), angles.psi)
    return quat_normalize(quat_mul(quat_mul(qz, qy), qx))


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion; shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        w, x, y, z = q
        out = np.empty((3, 3))
        out[0, 0] = 1 - 2 * (y * y + z * z)
        out[0, 1] = 2 * (x * y - w * z)
        out[0, 2] = 2 * (x * z + w * y)
        out[1, 0] = 2 * (x * y + w * z)
        out[1, 1] = 1 - 2 * (x * x + z * z)
        out[1, 2] = 2 * (y * z - w * x)
        out[2, 0] = 2 * (x * z - w * y)
        out[2, 1] = 2 * (y * z + w * x)
        out[2, 2] = 1 - 2 * (x * x + y * y)
        return out
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector (angle * axis)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-10
    # sin(half)/angle -> 1/2 - angle^2/48 for small angles
    k = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), k * rotvec], axis=-1)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion, hemisphere-normalized; norm <= pi."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    q = q * sign
    w = q[..., 0]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    small = s < 1e-10
    scale = np.where(small, 2.0 / np.where(w == 0.0, 1.0, w), angle / np.where(small, 1.0, s))
    return scale[..., None] * v


def omega_to_quat_dot(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Quaternion kinematics for body-frame angular velocity."""
    q = np.asarray(q, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    zeros = np.zeros(omega.shape[:-1] + (1,))
    return 0.5 * quat_mul(q, np.concatenate([zeros, omega], axis=-1))


def attitude_error_log(q: np.ndarray, q_des: np.ndarray) -> np.ndarray:
    """Rotation-vector logarithm of the relative rotation q * q_des^-1.

    Zero iff the two rotations coincide; norm <= pi by hemisphere choice.
    """
    return quat_log(quat_mul(q, quat_conj(q_des)))


def left_jacobian_inverse(rotvec: np.ndarray) -> np.ndarray:
    """Inverse left Jacobian of the rotation exponential at the given vector.

    Satisfies d/da log(Exp(a) Exp(b)) |_(a=0) = left_jacobian_inverse(b).
    """
    rotvec = np.asarray(rotvec, dtype=np.float64)
    theta = np.linalg.norm(rotvec)
    S = hat(rotvec)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * S + (1.0 / 12.0) * (S @ S)
    coeff = (1.0 - 0.5 * theta * math.sin(theta) / (1.0 - math.cos(theta))) / (theta * theta)
    return np.eye(3) - 0.5 * S + coeff * (S @ S)
