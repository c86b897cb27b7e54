"""Ground-truth simulator of the coupled quadrotor-cable-payload system.

World frame is z-up, so the gravity vector is (0, 0, -g); thrust acts along
the +z body axis of each vehicle.  Cables are modeled as stiff unilateral
spring-dampers: a cable transmits force only while stretched past its rest
length, so slackness falls out of the model without constraint solving.

The hot path integrates one flat state vector (payload first, then each MAV;
13 numbers per body: position, velocity, quaternion, body rates) with a single
shared Runge-Kutta step.  The per-body derivative operations below are the
reference formulas; `step_world` uses a fused equivalent and a test pins the
two against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

_BODY_DIM = 13


class DegenerateGeometry(ValueError):
    """A MAV coincides with its cable attachment point."""


class NonFiniteState(RuntimeError):
    """Integration produced NaN or infinity."""


class CableOverload(RuntimeError):
    """Cable tension exceeded the sanity ceiling (simulation diverged)."""


@dataclass
class SystemParams:
    """Physical parameters of the rig.

    Scalar per-MAV entries broadcast to all n vehicles.
    """

    n: int
    m_i: np.ndarray  # (n,) kg
    J_i: np.ndarray  # (n, 3, 3) kg m^2
    m_L: float
    J_L: np.ndarray  # (3, 3) kg m^2
    r_i: np.ndarray  # (n, 3) attachment offsets, payload frame, m
    l_i: np.ndarray  # (n,) cable rest lengths, m
    F_max: float  # thrust ceiling per MAV, N
    f_max: float  # cable tension bound, N
    g: float = 9.81
    cable_stiffness: float = 5000.0  # N/m
    cable_damping: float = 50.0  # N s/m

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need at least 3 vehicles")
        self.m_i = np.broadcast_to(np.asarray(self.m_i, dtype=np.float64), (self.n,)).copy()
        J = np.asarray(self.J_i, dtype=np.float64)
        if J.shape == (3, 3):
            J = np.broadcast_to(J, (self.n, 3, 3))
        self.J_i = J.reshape(self.n, 3, 3).copy()
        self.J_L = np.asarray(self.J_L, dtype=np.float64).reshape(3, 3)
        self.r_i = np.asarray(self.r_i, dtype=np.float64).reshape(self.n, 3)
        self.l_i = np.broadcast_to(np.asarray(self.l_i, dtype=np.float64), (self.n,)).copy()
        if np.any(self.m_i <= 0) or self.m_L <= 0:
            raise ValueError("masses must be positive")
        if np.any(self.l_i <= 0):
            raise ValueError("cable lengths must be positive")
        if self.F_max <= 0 or self.f_max <= 0:
            raise ValueError("force bounds must be positive")
        for M, name in [(self.J_L, "J_L")] + [(self.J_i[k], "J_i") for k in range(self.n)]:
            if np.linalg.norm(M - M.T) > 1e-12 or np.min(np.linalg.eigvalsh(M)) <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
        self._J_i_inv = np.linalg.inv(self.J_i)
        self._J_L_inv = np.linalg.inv(self.J_L)

    @property
    def g_vec(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.g])


@dataclass
class MavState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray  # unit quaternion, scalar first
    omega: np.ndarray  # body frame rad/s

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.q, self.omega])

    @classmethod
    def from_vector(cls, y: np.ndarray) -> "MavState":
        return cls(y[0:3].copy(), y[3:6].copy(), y[6:10].copy(), y[10:13].copy())


@dataclass
class PayloadState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.q, self.omega])

    @classmethod
    def from_vector(cls, y: np.ndarray) -> "PayloadState":
        return cls(y[0:3].copy(), y[3:6].copy(), y[6:10].copy(), y[10:13].copy())


@dataclass
class FullState:
    payload: PayloadState
    mavs: list

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.payload.as_vector()] + [m.as_vector() for m in self.mavs])

    @classmethod
    def from_vector(cls, y: np.ndarray, n: int) -> "FullState":
        rows = y.reshape(n + 1, _BODY_DIM)
        return cls(
            PayloadState.from_vector(rows[0]),
            [MavState.from_vector(rows[1 + k]) for k in range(n)],
        )


@dataclass
class CableReading:
    """Geometry and tension of one cable.

    direction is the world-frame unit vector from the MAV mass center toward
    its attachment point (defined only while taut).
    """

    direction: np.ndarray
    tension: float
    taut: bool
    stretch: float = 0.0


@dataclass
class DisturbanceModel:
    """Per-step additive payload-state disturbance, norm-bounded by eta.

    The sample lives in the 12-dimensional tangent of the payload state
    (position, velocity, attitude rotation-vector, body rate).  Pose
    components (position, attitude) are scaled down by pose_scale relative
    to the velocity components: an impulsive force moves the velocity
    within one step while the pose only follows through integration, and
    an unscaled position jump would fight the cable springs directly.
    """

    eta: float = 0.0
    seed: int = 0
    kind: str = "none"  # none | uniform-bounded
    pose_scale: float = 0.002
    _rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("none", "uniform-bounded"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if not 0.0 <= self.pose_scale <= 1.0:
            raise ValueError("pose_scale must lie in [0, 1]")
        self._rng = np.random.default_rng(self.seed)

    def sample(self) -> np.ndarray:
        if self.kind == "none" or self.eta == 0.0:
            return np.zeros(12)
        u = self._rng.uniform(-1.0, 1.0, 12)
        norm = np.linalg.norm(u)
        if norm > 1.0:
            u = u / norm
        u[0:3] *= self.pose_scale
        u[6:9] *= self.pose_scale
        return self.eta * u


def apply_payload_disturbance(payload: PayloadState, d: np.ndarray) -> PayloadState:
    """Add a 12-dim tangent disturbance to a payload state (attitude via exp)."""
    return PayloadState(
        payload.p + d[0:3],
        payload.v + d[3:6],
        so3.quat_normalize(so3.quat_mul(payload.q, so3.quat_exp(d[6:9]))),
        payload.omega + d[9:12],
    )


def saturate_thrust(F: float, F_max: float) -> float:
    """Clamp a thrust command into [0, F_max]."""
    if F_max <= 0:
        raise ValueError("F_max must be positive")
    return float(min(max(F, 0.0), F_max))


def cable_closure(full: FullState, params: SystemParams) -> list:
    """Compute per-cable taut/slack status, direction, and spring-damper tension."""
    readings = []
    R_L = so3.quat_to_rotation(full.payload.q)
    for k in range(params.n):
        attach = full.payload.p + R_L @ params.r_i[k]
        v_attach = full.payload.v + R_L @ so3.cross3(full.payload.omega, params.r_i[k])
        d = attach - full.mavs[k].p
        dist = float(np.linalg.norm(d))
        if dist < 1e-9:
            raise DegenerateGeometry(f"MAV {k} coincides with its attachment point")
        stretch = dist - params.l_i[k]
        if stretch > 0.0:
            e = d / dist
            sdot = float(e @ (v_attach - full.mavs[k].v))
            tension = params.cable_stiffness * stretch + params.cable_damping * max(0.0, sdot)
            if tension > 10.0 * params.f_max:
                raise CableOverload(f"cable {k} tension {tension:.3f} N past sanity ceiling")
            readings.append(CableReading(e, tension, True, stretch))
        else:
            readings.append(CableReading(np.zeros(3), 0.0, False, stretch))
    return readings


def mav_derivative(
    state: MavState,
    thrust: float,
    torque: np.ndarray,
    cable: CableReading,
    params: SystemParams,
    i: int,
) -> MavState:
    """Time derivative of one vehicle state; thrust must already be saturated.

    The cable pulls the vehicle toward the attachment point with the cable
    tension, thrust acts along the body z axis.
    """
    R = so3.quat_to_rotation(state.q)
    force = thrust * R[:, 2] + params.m_i[i] * params.g_vec
    if cable.taut:
        force = force + cable.tension * cable.direction
    omega = state.omega
    omega_dot = params._J_i_inv[i] @ (torque - so3.cross3(omega, params.J_i[i] @ omega))
    return MavState(state.v.copy(), force / params.m_i[i], so3.omega_to_quat_dot(state.q, omega), omega_dot)


def payload_derivative(state: PayloadState, cables: list, params: SystemParams) -> PayloadState:
    """Time derivative of the payload state under the given cable readings.

    Each taut cable pulls the payload toward its MAV (the reaction to the pull
    on the vehicle), applied at the attachment offset.
    """
    R_L = so3.quat_to_rotation(state.q)
    force = params.m_L * params.g_vec
    moment = np.zeros(3)
    for k, cable in enumerate(cables):
        if not cable.taut:
            continue
        f_world = -cable.tension * cable.direction
        force = force + f_world
        moment = moment + so3.cross3(params.r_i[k], R_L.T @ f_world)
    omega = state.omega
    omega_dot = params._J_L_inv @ (moment - so3.cross3(omega, params.J_L @ omega))
    return PayloadState(state.v.copy(), force / params.m_L, so3.omega_to_quat_dot(state.q, omega), omega_dot)


def rk4_step(derivative_fn, state, inputs, dt: float):
    """Classical 4-stage Runge-Kutta update of `state` under held `inputs`.

    Works on any array-like state; derivative_fn(state, inputs) must return the
    matching derivative.  Callers with quaternion states renormalize after.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.asarray(state, dtype=np.float64)
    k1 = np.asarray(derivative_fn(y, inputs))
    k2 = np.asarray(derivative_fn(y + 0.5 * dt * k1, inputs))
    k3 = np.asarray(derivative_fn(y + 0.5 * dt * k2, inputs))
    k4 = np.asarray(derivative_fn(y + dt * k3, inputs))
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("integration produced non-finite state")
    return out


def _world_derivative_flat(y: np.ndarray, inputs, params: SystemParams) -> np.ndarray:
    """Fused derivative of the flat world vector. inputs = (thrusts, torques)."""
    thrusts, torques = inputs
    n = params.n
    rows = y.reshape(n + 1, _BODY_DIM)
    p = rows[:, 0:3]
    v = rows[:, 3:6]
    q = rows[:, 6:10]
    w = rows[:, 10:13]

    R_L = so3.quat_to_rotation(q[0])
    attach = p[0] + params.r_i @ R_L.T
    v_attach = v[0] + so3.cross3_rows(w[0], params.r_i) @ R_L.T
    d = attach - p[1:]
    dist = np.linalg.norm(d, axis=1)
    if np.any(dist < 1e-9):
        raise DegenerateGeometry("a MAV coincides with its attachment point")
    stretch = dist - params.l_i
    taut = stretch > 0.0
    e = d / dist[:, None]
    sdot = np.einsum("ij,ij->i", e, v_attach - v[1:])
    tension = np.where(
        taut,
        params.cable_stiffness * stretch + params.cable_damping * np.maximum(0.0, sdot),
        0.0,
    )
    cable_force = tension[:, None] * e  # on each MAV, world frame

    R_mavs = so3.quat_to_rotation(q[1:])
    thrust_force = R_mavs[:, :, 2] * thrusts[:, None]
    g_vec = params.g_vec

    acc = np.empty((n + 1, 3))
    acc[1:] = (thrust_force + cable_force) / params.m_i[:, None] + g_vec
    payload_force = -cable_force.sum(axis=0)
    acc[0] = payload_force / params.m_L + g_vec

    e_body = e @ R_L  # world -> payload frame (rows of e times R_L columns)
    payload_moment = so3.cross3_rows(params.r_i, -tension[:, None] * e_body).sum(axis=0)

    wdot = np.empty((n + 1, 3))
    wdot[0] = params._J_L_inv @ (payload_moment - so3.cross3(w[0], params.J_L @ w[0]))
    Jw = np.einsum("nij,nj->ni", params.J_i, w[1:])
    wdot[1:] = np.einsum(
        "nij,nj->ni", params._J_i_inv, torques - so3.cross3_rows(w[1:], Jw)
    )

    qdot = so3.omega_to_quat_dot(q, w)

    out = np.empty_like(rows)
    out[:, 0:3] = v
    out[:, 3:6] = acc
    out[:, 6:10] = qdot
    out[:, 10:13] = wdot
    return out.reshape(-1)


def step_world(
    full: FullState,
    commands,
    disturbance: DisturbanceModel,
    dt: float,
    params: SystemParams,
):
    """Advance the whole system one step with held commands.

    commands: list of (thrust, torque) per MAV; thrust is saturated here.
    Returns (new FullState, CableReadings evaluated at the incoming state).
    The disturbance adds one bounded sample to the payload state after the step.
    """
    if len(commands) != params.n or len(full.mavs) != params.n:
        raise ValueError("need one (thrust, torque) command per MAV")
    readings = cable_closure(full, params)
    thrusts = np.array([saturate_thrust(float(c[0]), params.F_max) for c in commands])
    torques = np.array([np.asarray(c[1], dtype=np.float64) for c in commands])
    deriv = lambda yv, u: _world_derivative_flat(yv, u, params)
    y = rk4_step(deriv, full.as_vector(), (thrusts, torques), dt)
    rows = y.reshape(params.n + 1, _BODY_DIM)
    rows[:, 6:10] = so3.quat_normalize(rows[:, 6:10])
    new_state = FullState.from_vector(rows.reshape(-1), params.n)
    if disturbance is not None and disturbance.kind != "none" and disturbance.eta > 0.0:
        new_state = FullState(
            apply_payload_disturbance(new_state.payload, disturbance.sample()),
            new_state.mavs,
        )
    return new_state, readings
