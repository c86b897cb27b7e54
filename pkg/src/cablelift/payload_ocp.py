"""Finite-horizon tracking problem on the payload's six degrees of freedom.

The decision variables are the payload state trajectory and the total cable
wrench (world-frame force, payload-frame moment) at each stage.  Cables never
enter the decision vector: the per-cable tension bound is expressed through
the minimal-norm allocation at the reference attitude, one norm row per cable
per stage.

States live on R^3 x S^3 x R^6; all derivatives are taken in the 12-d tangent
(position, velocity, attitude rotation-vector, body rate) around a nominal
trajectory, with right-multiplicative quaternion retraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import allocation, plant, so3
from .metrics import FunnelSpec

NX = 12  # tangent dimension of the payload state
NU = 6  # wrench dimension


class ConfigError(ValueError):
    """Inconsistent problem dimensions or option combinations."""


class DimensionMismatch(ValueError):
    """Trajectory lengths do not match the horizon."""


@dataclass
class OcpState:
    """Payload pose and twist: position, attitude, velocity, body rate."""

    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    omega: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.q, self.omega])

    @classmethod
    def from_vector(cls, y: np.ndarray) -> "OcpState":
        return cls(y[0:3].copy(), y[6:10].copy(), y[3:6].copy(), y[10:13].copy())

    def copy(self) -> "OcpState":
        return OcpState(self.p.copy(), self.q.copy(), self.v.copy(), self.omega.copy())


@dataclass
class Wrench:
    """Total cable wrench: force in the world frame, moment in the payload frame."""

    F: np.ndarray
    M: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.F, self.M])

    @classmethod
    def from_vector(cls, u: np.ndarray) -> "Wrench":
        return cls(u[0:3].copy(), u[3:6].copy())


@dataclass
class CostWeights:
    Q_X: np.ndarray  # (12, 12) stage state weight
    Q_U: np.ndarray  # (6, 6) input weight
    Q_XN: np.ndarray  # (12, 12) terminal weight

    def __post_init__(self):
        self.Q_X = np.asarray(self.Q_X, dtype=np.float64).reshape(NX, NX)
        self.Q_U = np.asarray(self.Q_U, dtype=np.float64).reshape(NU, NU)
        self.Q_XN = np.asarray(self.Q_XN, dtype=np.float64).reshape(NX, NX)
        for M, name, strict in [
            (self.Q_X, "Q_X", False),
            (self.Q_U, "Q_U", False),
            (self.Q_XN, "Q_XN", True),
        ]:
            if np.linalg.norm(M - M.T) > 1e-9:
                raise ConfigError(f"{name} must be symmetric")
            lo = np.min(np.linalg.eigvalsh(M))
            if lo < -1e-12 or (strict and lo <= 0):
                raise ConfigError(f"{name} eigenvalues out of range")


@dataclass
class ReferencePoint:
    p_des: np.ndarray
    q_des: np.ndarray
    v_des: np.ndarray
    omega_des: np.ndarray
    wrench_des: Wrench


@dataclass
class OcpConfig:
    """Everything needed to assemble a problem around one reference window."""

    weights: CostWeights
    m_L: float
    J_L: np.ndarray
    r_i: np.ndarray  # cable attachment offsets, payload frame
    f_max: float
    N: int = 20
    dt: float = 0.05
    g: float = 9.81
    obstacle_center: Optional[np.ndarray] = None
    obstacle_clearance: float = 0.0
    funnel: Optional[FunnelSpec] = FunnelSpec.constant(0.2)
    funnel_weight: float = 1e3


@dataclass
class OcpProblem:
    x0: OcpState
    N: int
    dt: float
    references: List[ReferencePoint]
    weights: CostWeights
    m_L: float
    J_L: np.ndarray
    g: float
    amap: allocation.AllocationMap
    f_max: float
    obstacle_center: Optional[np.ndarray]
    obstacle_clearance: float
    funnel: Optional[FunnelSpec]
    funnel_weight: float
    _J_L_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._J_L_inv = np.linalg.inv(self.J_L)

    @property
    def g_vec(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.g])


@dataclass
class OcpSolution:
    states: List[OcpState]
    inputs: List[Wrench]
    cost: float
    kkt_residual: float
    iterations: int
    status: str  # converged | max_iter | infeasible


def build_ocp(x0: OcpState, references: Sequence[ReferencePoint], config: OcpConfig) -> OcpProblem:
    """Assemble the tracking problem for one reference window.

    The window must hold exactly N+1 points at the problem's step spacing.
    """
    if config.N < 1:
        raise ConfigError("horizon must be at least 1")
    if config.dt <= 0:
        raise ConfigError("dt must be positive")
    if len(references) != config.N + 1:
        raise ConfigError(
            f"need {config.N + 1} reference points for horizon {config.N}, got {len(references)}"
        )
    amap = allocation.build_allocation(config.r_i)
    return OcpProblem(
        x0=x0.copy(),
        N=config.N,
        dt=config.dt,
        references=list(references),
        weights=config.weights,
        m_L=config.m_L,
        J_L=np.asarray(config.J_L, dtype=np.float64).reshape(3, 3),
        g=config.g,
        amap=amap,
        f_max=config.f_max,
        obstacle_center=None
        if config.obstacle_center is None
        else np.asarray(config.obstacle_center, dtype=np.float64),
        obstacle_clearance=config.obstacle_clearance,
        funnel=config.funnel,
        funnel_weight=config.funnel_weight,
    )


# ---------------------------------------------------------------------------
# errors and dynamics


def state_error(x: OcpState, ref: ReferencePoint) -> np.ndarray:
    """Reference-minus-actual in the 12-d tangent.

    Position, velocity, and rate blocks are plain differences; the attitude
    block is the rotation-vector of actual relative to desired.
    """
    return np.concatenate(
        [
            ref.p_des - x.p,
            ref.v_des - x.v,
            so3.attitude_error_log(x.q, ref.q_des),
            ref.omega_des - x.omega,
        ]
    )


def wrench_error(u: Wrench, ref: ReferencePoint) -> np.ndarray:
    return np.concatenate([ref.wrench_des.F - u.F, ref.wrench_des.M - u.M])


def payload_dynamics(x: OcpState, u: Wrench, problem) -> OcpState:
    """Continuous-time rigid-body derivative under a total wrench."""
    J_L = problem.J_L
    dv = u.F / problem.m_L + problem.g_vec
    dw = np.linalg.solve(J_L, u.M - so3.cross3(x.omega, J_L @ x.omega))
    return OcpState(
        p=x.v.copy(), q=so3.omega_to_quat_dot(x.q, x.omega), v=dv, omega=dw
    )


def _dynamics_flat_batch(Y: np.ndarray, U: np.ndarray, problem) -> np.ndarray:
    """Vectorized derivative of (B, 13) payload states under (B, 6) wrenches."""
    p = Y[:, 0:3]
    v = Y[:, 3:6]
    q = Y[:, 6:10]
    w = Y[:, 10:13]
    out = np.empty_like(Y)
    out[:, 0:3] = v
    out[:, 3:6] = U[:, 0:3] / problem.m_L + problem.g_vec
    out[:, 6:10] = so3.omega_to_quat_dot(q, w)
    Jw = w @ problem.J_L.T
    out[:, 10:13] = (U[:, 3:6] - so3.cross3_rows(w, Jw)) @ problem._J_L_inv.T
    return out


def discretize(x: OcpState, u: Wrench, dt: float, problem) -> OcpState:
    """One Runge-Kutta step of the payload dynamics, attitude renormalized."""
    uv = u.as_vector()[None, :]
    y = plant.rk4_step(
        lambda yv, _: _dynamics_flat_batch(yv[None, :], uv, problem)[0],
        x.as_vector(),
        None,
        dt,
    )
    y[6:10] = so3.quat_normalize(y[6:10])
    return OcpState.from_vector(y)


def _discretize_batch(Y: np.ndarray, U: np.ndarray, dt: float, problem) -> np.ndarray:
    k1 = _dynamics_flat_batch(Y, U, problem)
    k2 = _dynamics_flat_batch(Y + 0.5 * dt * k1, U, problem)
    k3 = _dynamics_flat_batch(Y + 0.5 * dt * k2, U, problem)
    k4 = _dynamics_flat_batch(Y + dt * k3, U, problem)
    out = Y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise plant.NonFiniteState("payload integration produced non-finite state")
    out[:, 6:10] = so3.quat_normalize(out[:, 6:10])
    return out


# ---------------------------------------------------------------------------
# tangent-space plumbing


def retract(x: OcpState, delta: np.ndarray) -> OcpState:
    """Move a state by a 12-d tangent step (attitude via right perturbation)."""
    return OcpState(
        p=x.p + delta[0:3],
        q=so3.quat_normalize(so3.quat_mul(x.q, so3.quat_exp(delta[6:9]))),
        v=x.v + delta[3:6],
        omega=x.omega + delta[9:12],
    )


def local_coords(base: OcpState, x: OcpState) -> np.ndarray:
    """Tangent coordinates of x around base; inverse of retract at base."""
    return np.concatenate(
        [
            x.p - base.p,
            x.v - base.v,
            so3.quat_log(so3.quat_mul(so3.quat_conj(base.q), x.q)),
            x.omega - base.omega,
        ]
    )


def _retract_flat_batch(x: OcpState, deltas: np.ndarray) -> np.ndarray:
    B = len(deltas)
    out = np.empty((B, 13))
    out[:, 0:3] = x.p + deltas[:, 0:3]
    out[:, 3:6] = x.v + deltas[:, 3:6]
    out[:, 6:10] = so3.quat_normalize(
        so3.quat_mul(np.broadcast_to(x.q, (B, 4)), so3.quat_exp(deltas[:, 6:9]))
    )
    out[:, 10:13] = x.omega + deltas[:, 9:12]
    return out


def _local_coords_flat_batch(base_flat: np.ndarray, Y: np.ndarray) -> np.ndarray:
    B = len(Y)
    out = np.empty((B, NX))
    out[:, 0:3] = Y[:, 0:3] - base_flat[0:3]
    out[:, 3:6] = Y[:, 3:6] - base_flat[3:6]
    out[:, 6:9] = so3.quat_log(
        so3.quat_mul(so3.quat_conj(np.broadcast_to(base_flat[6:10], (B, 4))), Y[:, 6:10])
    )
    out[:, 9:12] = Y[:, 10:13] - base_flat[10:13]
    return out


def linearize_dynamics(
    x: OcpState, u: Wrench, dt: float, problem, fd_step: float = 1e-6
) -> Tuple[np.ndarray, np.ndarray]:
    """Tangent-space Jacobians (A, B) of the discrete step by central differences.

    All 36 perturbed rollouts are evaluated as one vectorized batch.
    """
    x_next = discretize(x, u, dt, problem)
    x_next_flat = x_next.as_vector()

    dx = fd_step * np.eye(NX)
    deltas = np.vstack([dx, -dx])  # (24, 12)
    Y0 = _retract_flat_batch(x, deltas)
    uv = np.broadcast_to(u.as_vector(), (2 * NX, NU))
    Yx = _discretize_batch(Y0, uv, dt, problem)
    phi_x = _local_coords_flat_batch(x_next_flat, Yx)
    A = (phi_x[:NX] - phi_x[NX:]).T / (2.0 * fd_step)

    du = fd_step * np.eye(NU)
    Uu = np.vstack([u.as_vector() + du, u.as_vector() - du])  # (12, 6)
    Y0u = np.broadcast_to(x.as_vector(), (2 * NU, 13)).copy()
    Yu = _discretize_batch(Y0u, Uu, dt, problem)
    phi_u = _local_coords_flat_batch(x_next_flat, Yu)
    B = (phi_u[:NU] - phi_u[NU:]).T / (2.0 * fd_step)
    return A, B


def dynamics_defects(
    states: Sequence[OcpState], inputs: Sequence[Wrench], problem
) -> List[np.ndarray]:
    """Per-stage gap between the rolled-out step and the stored next state."""
    return [
        local_coords(states[i + 1], discretize(states[i], inputs[i], problem.dt, problem))
        for i in range(problem.N)
    ]


# ---------------------------------------------------------------------------
# cost


def _funnel_violation(p_err: np.ndarray, eps: float) -> float:
    return max(0.0, float(np.linalg.norm(p_err)) - eps)


def total_cost(states: Sequence[OcpState], inputs: Sequence[Wrench], problem) -> float:
    """Quadratic tracking cost plus the soft funnel penalty.

    The funnel penalizes position deviation beyond its radius at every stage
    the optimizer can influence (1..N).
    """
    if len(states) != problem.N + 1 or len(inputs) != problem.N:
        raise DimensionMismatch(
            f"expected {problem.N + 1} states and {problem.N} inputs, "
            f"got {len(states)} and {len(inputs)}"
        )
    W = problem.weights
    cost = 0.0
    for i in range(problem.N):
        e_x = state_error(states[i], problem.references[i])
        e_u = wrench_error(inputs[i], problem.references[i])
        cost += float(e_x @ W.Q_X @ e_x) + float(e_u @ W.Q_U @ e_u)
    e_N = state_error(states[problem.N], problem.references[problem.N])
    cost += float(e_N @ W.Q_XN @ e_N)
    if problem.funnel is not None:
        for i in range(1, problem.N + 1):
            eps = problem.funnel.value(i * problem.dt)
            v = _funnel_violation(problem.references[i].p_des - states[i].p, eps)
            cost += problem.funnel_weight * v * v
    return cost


def _error_jacobian(x: OcpState, ref: ReferencePoint) -> np.ndarray:
    """Exact tangent Jacobian of state_error at x (12 x 12, block diagonal)."""
    J = np.zeros((NX, NX))
    J[0:3, 0:3] = -np.eye(3)
    J[3:6, 3:6] = -np.eye(3)
    e_att = so3.attitude_error_log(x.q, ref.q_des)
    J[6:9, 6:9] = so3.left_jacobian_inverse(e_att) @ so3.quat_to_rotation(x.q)
    J[9:12, 9:12] = -np.eye(3)
    return J


def cost_expansion(states: Sequence[OcpState], inputs: Sequence[Wrench], problem):
    """Per-stage gradients and Gauss-Newton Hessians of total_cost.

    Gradients are exact (up to the funnel hinge kink); Hessians drop the
    second-derivative curvature of the error maps, which keeps them PSD.
    Returns (H_x, g_x) over stages 0..N and (H_u, g_u) over 0..N-1.
    """
    W = problem.weights
    H_x, g_x, H_u, g_u = [], [], [], []
    for i in range(problem.N + 1):
        Q = W.Q_XN if i == problem.N else W.Q_X
        ref = problem.references[i]
        e = state_error(states[i], ref)
        J = _error_jacobian(states[i], ref)
        H = 2.0 * J.T @ Q @ J
        g = 2.0 * J.T @ (Q @ e)
        if problem.funnel is not None and i >= 1:
            eps = problem.funnel.value(i * problem.dt)
            p_err = ref.p_des - states[i].p
            rho = float(np.linalg.norm(p_err))
            v = rho - eps
            if v > 0.0 and rho > 1e-12:
                d_rho = np.zeros(NX)
                d_rho[0:3] = -p_err / rho  # d|p_des - p|/d(delta p)
                g = g + 2.0 * problem.funnel_weight * v * d_rho
                H = H + 2.0 * problem.funnel_weight * np.outer(d_rho, d_rho)
                # curvature of the norm itself; convex since v > 0, and
                # without it the solver crawls once the hinge residual is big
                phat = p_err / rho
                H[0:3, 0:3] += (2.0 * problem.funnel_weight * v / rho) * (
                    np.eye(3) - np.outer(phat, phat)
                )
        H_x.append(H)
        g_x.append(g)
        if i < problem.N:
            e_u = wrench_error(inputs[i], problem.references[i])
            H_u.append(2.0 * W.Q_U)
            g_u.append(-2.0 * W.Q_U @ e_u)
    return H_x, g_x, H_u, g_u


# ---------------------------------------------------------------------------
# inequality rows


def tension_rows(u: Wrench, ref: ReferencePoint, problem) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cable tension-norm rows linearized at the nominal input.

    Row k reads c_k + J_k @ delta_u <= 0 with c_k = |mu_k| - f_max, where
    mu_k is cable k's minimal-norm share of the wrench at the reference
    attitude.  Rows with vanishing share are omitted (inactive by a margin
    of f_max), and an infinite bound produces no rows at all.
    """
    if not np.isfinite(problem.f_max):
        return np.zeros((0, NU)), np.zeros(0)
    R_ref = so3.quat_to_rotation(ref.q_des)
    T = np.zeros((NU, NU))
    T[0:3, 0:3] = R_ref.T
    T[3:6, 3:6] = np.eye(3)
    t = T @ u.as_vector()
    vals, jacs = [], []
    for k in range(problem.amap.n):
        G = problem.amap.P_pinv[3 * k : 3 * k + 3, :]
        y = G @ t
        ny = float(np.linalg.norm(y))
        if ny < 1e-9:
            continue
        vals.append(ny - problem.f_max)
        jacs.append((y / ny) @ G @ T)
    if not vals:
        return np.zeros((0, NU)), np.zeros(0)
    return np.array(jacs), np.array(vals)


def tension_row_hessians(u: Wrench, ref: ReferencePoint, problem) -> np.ndarray:
    """Second derivatives of the tension-norm rows, one 6x6 block per row.

    Same row order and omission rule as tension_rows.  Each block is the
    positive semidefinite curvature of |mu_k| in the wrench variable, used by
    the solver to weight active-constraint curvature into its Hessian.
    """
    if not np.isfinite(problem.f_max):
        return np.zeros((0, NU, NU))
    R_ref = so3.quat_to_rotation(ref.q_des)
    T = np.zeros((NU, NU))
    T[0:3, 0:3] = R_ref.T
    T[3:6, 3:6] = np.eye(3)
    t = T @ u.as_vector()
    blocks = []
    for k in range(problem.amap.n):
        G = problem.amap.P_pinv[3 * k : 3 * k + 3, :]
        y = G @ t
        ny = float(np.linalg.norm(y))
        if ny < 1e-9:
            continue
        yh = y / ny
        GT = G @ T
        blocks.append(GT.T @ ((np.eye(3) - np.outer(yh, yh)) / ny) @ GT)
    if not blocks:
        return np.zeros((0, NU, NU))
    return np.array(blocks)


def obstacle_rows(x: OcpState, problem) -> Tuple[np.ndarray, np.ndarray]:
    """Clearance row eps - |p - p_O| <= 0 linearized at the nominal state."""
    if problem.obstacle_center is None:
        return np.zeros((0, NX)), np.zeros(0)
    d = x.p - problem.obstacle_center
    dist = float(np.linalg.norm(d))
    if dist < 1e-12:
        # sitting exactly on the obstacle: push out along an arbitrary axis
        J = np.zeros((1, NX))
        J[0, 0] = -1.0
        return J, np.array([problem.obstacle_clearance])
    J = np.zeros((1, NX))
    J[0, 0:3] = -d / dist
    return J, np.array([problem.obstacle_clearance - dist])
