"""Sequential quadratic programming on the payload tracking problem.

Transcription is multiple shooting in the 12-d tangent around a nominal
trajectory: states and wrenches are both decision variables, dynamics enter
as defect equalities, and each iteration solves one structured convex QP
(Gauss-Newton Hessian, linearized constraint rows) followed by an L1 merit
line search.  The QP itself is solved in-repo: a primal-dual interior point
loop whose every Newton step is an equality-constrained problem handled by a
Riccati sweep, so the cost per iteration stays linear in the horizon length.

The stagewise QP data layout is dimension-generic on purpose; the unit tests
drive it with scalar problems whose KKT systems are solved by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import payload_ocp as ocp


class Infeasible(RuntimeError):
    """Hard constraint set is inconsistent."""


class QpNumericalFailure(RuntimeError):
    """Riccati factorization failed at every regularization level."""


@dataclass
class SolverConfig:
    max_sqp_iters: int = 30
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-6
    merit_weight: float = 10.0
    backtrack: float = 0.5
    min_step: float = 1e-4
    armijo: float = 1e-4
    qp_max_iters: int = 100
    qp_tol: float = 1e-9
    reg: float = 1e-8
    fd_step: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.backtrack < 1.0):
            raise ValueError("backtracking factor must be in (0, 1)")
        for name in ("kkt_tol", "feas_tol", "min_step", "qp_tol", "reg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class WarmStart:
    states: List[ocp.OcpState]
    inputs: List[ocp.Wrench]


def shift_warm_start(previous: ocp.OcpSolution, elapsed_steps: int, new_horizon: int) -> WarmStart:
    """Reuse a solution after elapsed_steps have passed.

    Drops the consumed prefix, then repeats the final stage (or truncates)
    until the trajectory fits the new horizon.
    """
    if elapsed_steps < 1:
        raise ValueError("elapsed_steps must be at least 1")
    states = [s.copy() for s in previous.states[elapsed_steps:]]
    inputs = [ocp.Wrench(u.F.copy(), u.M.copy()) for u in previous.inputs[elapsed_steps:]]
    if not states:
        states = [previous.states[-1].copy()]
    last_input = previous.inputs[-1]
    while len(states) < new_horizon + 1:
        states.append(states[-1].copy())
    while len(inputs) < new_horizon:
        inputs.append(ocp.Wrench(last_input.F.copy(), last_input.M.copy()))
    return WarmStart(states=states[: new_horizon + 1], inputs=inputs[:new_horizon])


# ---------------------------------------------------------------------------
# structured QP


@dataclass
class QpData:
    """Stagewise convex QP over tangent steps (z_0..z_N, w_0..w_{N-1}).

    min sum_i 1/2 z H_x z + g_x z + 1/2 w H_u w + g_u w  (+ terminal z-term)
    s.t. z_0 = z0,  z_{i+1} = A_i z_i + B_i w_i + c_i,
         Cx_i z_i + cx_i <= 0,  Cu_i w_i + cu_i <= 0.
    """

    H_x: List[np.ndarray]
    g_x: List[np.ndarray]
    H_u: List[np.ndarray]
    g_u: List[np.ndarray]
    A: List[np.ndarray]
    B: List[np.ndarray]
    c: List[np.ndarray]
    Cx: List[np.ndarray]
    cx: List[np.ndarray]
    Cu: List[np.ndarray]
    cu: List[np.ndarray]
    z0: np.ndarray

    @property
    def N(self) -> int:
        return len(self.H_u)

    def row_count(self) -> int:
        return sum(len(v) for v in self.cx) + sum(len(v) for v in self.cu)


@dataclass
class QpResult:
    z: List[np.ndarray]
    w: List[np.ndarray]
    nu: List[np.ndarray]
    lam_x: List[np.ndarray]
    lam_u: List[np.ndarray]
    iterations: int
    status: str


def _riccati(
    data: QpData,
    H_x: List[np.ndarray],
    g_x: List[np.ndarray],
    H_u: List[np.ndarray],
    g_u: List[np.ndarray],
    c: List[np.ndarray],
    z0: np.ndarray,
):
    """Equality-constrained stage QP by backward value recursion.

    Returns (z, w, nu) with nu the dynamics multipliers (costates).
    Raises numpy.linalg.LinAlgError when an input Hessian block is not
    positive definite; the caller escalates regularization.
    """
    N = data.N
    V = H_x[N].copy()
    v = g_x[N].copy()
    K, k = [None] * N, [None] * N
    Vs, vs = [None] * (N + 1), [None] * (N + 1)
    Vs[N], vs[N] = V, v
    for i in range(N - 1, -1, -1):
        A, B = data.A[i], data.B[i]
        Vc = V @ c[i] + v
        Q_xx = H_x[i] + A.T @ V @ A
        Q_uu = H_u[i] + B.T @ V @ B
        Q_xu = A.T @ V @ B
        q_x = g_x[i] + A.T @ Vc
        q_u = g_u[i] + B.T @ Vc
        L = np.linalg.cholesky(0.5 * (Q_uu + Q_uu.T))
        rhs = np.column_stack([Q_xu.T, q_u])
        sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        K[i] = -sol[:, :-1]
        k[i] = -sol[:, -1]
        V = Q_xx + Q_xu @ K[i]
        V = 0.5 * (V + V.T)
        v = q_x + Q_xu @ k[i]
        Vs[i], vs[i] = V, v
    z = [z0.copy()]
    w = []
    nu = []
    for i in range(N):
        w.append(K[i] @ z[i] + k[i])
        z.append(data.A[i] @ z[i] + data.B[i] @ w[i] + c[i])
        nu.append(Vs[i + 1] @ z[i + 1] + vs[i + 1])
    return z, w, nu


def _qp_residuals(data: QpData, z, w, nu, lam_x, lam_u, s_x, s_u, sigma_mu):
    """Stationarity, equality, inequality, and complementarity residuals."""
    N = data.N
    r_stat = []
    for i in range(N + 1):
        r = data.H_x[i] @ z[i] + data.g_x[i]
        if i < N:
            r = r + data.A[i].T @ nu[i]
        if i > 0:
            r = r - nu[i - 1]
        if len(data.cx[i]):
            r = r + data.Cx[i].T @ lam_x[i]
        if i > 0:  # stage 0 is pinned; its stationarity is absorbed by the pin
            r_stat.append(r)
    for i in range(N):
        r = data.H_u[i] @ w[i] + data.g_u[i] + data.B[i].T @ nu[i]
        if len(data.cu[i]):
            r = r + data.Cu[i].T @ lam_u[i]
        r_stat.append(r)
    r_eq = [data.A[i] @ z[i] + data.B[i] @ w[i] + data.c[i] - z[i + 1] for i in range(N)]
    r_ineq, r_comp = [], []
    for i in range(N + 1):
        if len(data.cx[i]):
            r_ineq.append(data.Cx[i] @ z[i] + data.cx[i] + s_x[i])
            r_comp.append(lam_x[i] * s_x[i] - sigma_mu)
    for i in range(N):
        if len(data.cu[i]):
            r_ineq.append(data.Cu[i] @ w[i] + data.cu[i] + s_u[i])
            r_comp.append(lam_u[i] * s_u[i] - sigma_mu)
    return r_stat, r_eq, r_ineq, r_comp


def _max_norm(blocks) -> float:
    vals = [np.max(np.abs(b)) for b in blocks if len(b)]
    return float(max(vals)) if vals else 0.0


def qp_subproblem(data: QpData, config: Optional[SolverConfig] = None) -> QpResult:
    """Solve the stagewise QP; interior point when inequality rows exist.

    Raises Infeasible when the rows cannot be satisfied (duals diverge while
    primal infeasibility stalls) and QpNumericalFailure when factorizations
    fail at every regularization level.
    """
    config = config or SolverConfig()
    levels = [0.0, config.reg, 1e-6, 1e-4, 1e-2]
    last_error: Optional[Exception] = None
    for reg in levels:
        H_x = [H + reg * np.eye(len(H)) for H in data.H_x]
        H_u = [H + reg * np.eye(len(H)) for H in data.H_u]
        try:
            if data.row_count() == 0:
                z, w, nu = _riccati(data, H_x, data.g_x, H_u, data.g_u, data.c, data.z0)
                lam_x = [np.zeros(0)] * (data.N + 1)
                lam_u = [np.zeros(0)] * data.N
                return QpResult(z, w, nu, lam_x, lam_u, 1, "optimal")
            return _qp_interior_point(data, H_x, H_u, config)
        except np.linalg.LinAlgError as err:
            last_error = err
            continue
    raise QpNumericalFailure(f"Riccati factorization failed at reg {levels[-1]}: {last_error}")


def _qp_interior_point(data: QpData, H_x, H_u, config: SolverConfig) -> QpResult:
    N = data.N
    nx = len(data.z0)
    z = [np.zeros(nx) for _ in range(N + 1)]
    z[0] = data.z0.copy()
    w = [np.zeros(len(g)) for g in data.g_u]
    nu = [np.zeros(nx) for _ in range(N)]
    lam_x = [np.ones(len(v)) for v in data.cx]
    lam_u = [np.ones(len(v)) for v in data.cu]
    s_x = [np.maximum(1.0, np.abs(v)) for v in data.cx]
    s_u = [np.maximum(1.0, np.abs(v)) for v in data.cu]
    m = data.row_count()
    sigma = 0.1
    ftb = 0.995

    for it in range(1, config.qp_max_iters + 1):
        gap = sum(float(lam_x[i] @ s_x[i]) for i in range(N + 1)) + sum(
            float(lam_u[i] @ s_u[i]) for i in range(N)
        )
        mu = gap / m
        r_stat, r_eq, r_ineq, r_comp = _qp_residuals(
            data, z, w, nu, lam_x, lam_u, s_x, s_u, 0.0
        )
        if (
            _max_norm(r_stat) <= config.qp_tol * 10
            and _max_norm(r_eq) <= config.qp_tol
            and _max_norm(r_ineq) <= config.qp_tol
            and mu <= config.qp_tol
        ):
            return QpResult(z, w, nu, lam_x, lam_u, it, "optimal")
        lam_max = max(_max_norm(lam_x), _max_norm(lam_u))
        if lam_max > 1e8 and _max_norm(r_ineq) > 1e-6:
            raise Infeasible("inequality rows inconsistent: duals diverged")

        # condensed Newton step: absorb each row block into the stage Hessian
        sig_mu = sigma * mu
        Hx_eff, gx_eff = [], []
        for i in range(N + 1):
            H = H_x[i]
            g = data.H_x[i] @ z[i] + data.g_x[i]
            if i < N:
                g = g + data.A[i].T @ nu[i]
            if i > 0:
                g = g - nu[i - 1]
            if len(data.cx[i]):
                W = lam_x[i] / s_x[i]
                riq = data.Cx[i] @ z[i] + data.cx[i] + s_x[i]
                rc = lam_x[i] * s_x[i] - sig_mu
                H = H + data.Cx[i].T @ (W[:, None] * data.Cx[i])
                g = g + data.Cx[i].T @ (lam_x[i] + (lam_x[i] * riq - rc) / s_x[i])
            Hx_eff.append(H)
            gx_eff.append(g)
        Hu_eff, gu_eff = [], []
        for i in range(N):
            H = H_u[i]
            g = data.H_u[i] @ w[i] + data.g_u[i] + data.B[i].T @ nu[i]
            if len(data.cu[i]):
                W = lam_u[i] / s_u[i]
                riq = data.Cu[i] @ w[i] + data.cu[i] + s_u[i]
                rc = lam_u[i] * s_u[i] - sig_mu
                H = H + data.Cu[i].T @ (W[:, None] * data.Cu[i])
                g = g + data.Cu[i].T @ (lam_u[i] + (lam_u[i] * riq - rc) / s_u[i])
            Hu_eff.append(H)
            gu_eff.append(g)
        # new iterate must close the equality residual: dz_+ = A dz + B dw + r_eq
        dz, dw, dnu = _riccati(data, Hx_eff, gx_eff, Hu_eff, gu_eff, r_eq, np.zeros(nx))

        # recover slack/multiplier steps and the fraction-to-boundary step size
        alpha = 1.0
        ds_x, dl_x, ds_u, dl_u = [], [], [], []
        for i in range(N + 1):
            if len(data.cx[i]):
                riq = data.Cx[i] @ z[i] + data.cx[i] + s_x[i]
                rc = lam_x[i] * s_x[i] - sig_mu
                ds = -riq - data.Cx[i] @ dz[i]
                dl = -(rc + lam_x[i] * ds) / s_x[i]
                ds_x.append(ds)
                dl_x.append(dl)
                for val, step in ((s_x[i], ds), (lam_x[i], dl)):
                    neg = step < 0
                    if np.any(neg):
                        alpha = min(alpha, ftb * np.min(-val[neg] / step[neg]))
            else:
                ds_x.append(np.zeros(0))
                dl_x.append(np.zeros(0))
        for i in range(N):
            if len(data.cu[i]):
                riq = data.Cu[i] @ w[i] + data.cu[i] + s_u[i]
                rc = lam_u[i] * s_u[i] - sig_mu
                ds = -riq - data.Cu[i] @ dw[i]
                dl = -(rc + lam_u[i] * ds) / s_u[i]
                ds_u.append(ds)
                dl_u.append(dl)
                for val, step in ((s_u[i], ds), (lam_u[i], dl)):
                    neg = step < 0
                    if np.any(neg):
                        alpha = min(alpha, ftb * np.min(-val[neg] / step[neg]))
            else:
                ds_u.append(np.zeros(0))
                dl_u.append(np.zeros(0))

        for i in range(N + 1):
            z[i] = z[i] + alpha * dz[i]
            s_x[i] = s_x[i] + alpha * ds_x[i]
            lam_x[i] = lam_x[i] + alpha * dl_x[i]
        for i in range(N):
            w[i] = w[i] + alpha * dw[i]
            nu[i] = nu[i] + alpha * dnu[i]
            s_u[i] = s_u[i] + alpha * ds_u[i]
            lam_u[i] = lam_u[i] + alpha * dl_u[i]

    # out of iterations: distinguish infeasibility from slow convergence
    r_stat, r_eq, r_ineq, _ = _qp_residuals(data, z, w, nu, lam_x, lam_u, s_x, s_u, 0.0)
    if _max_norm(r_ineq) > 1e-6 and max(_max_norm(lam_x), _max_norm(lam_u)) > 1e6:
        raise Infeasible("inequality rows inconsistent: primal residual stalled")
    return QpResult(z, w, nu, lam_x, lam_u, config.qp_max_iters, "max_iter")


# ---------------------------------------------------------------------------
# SQP driver


def _cold_start(problem) -> WarmStart:
    """Roll the reference feedforward wrench out from the initial state."""
    states = [problem.x0.copy()]
    inputs = []
    for i in range(problem.N):
        wd = problem.references[i].wrench_des
        u = ocp.Wrench(wd.F.copy(), wd.M.copy())
        inputs.append(u)
        states.append(ocp.discretize(states[-1], u, problem.dt, problem))
    return WarmStart(states=states, inputs=inputs)


def _constraint_violations(states, inputs, problem):
    """Nonlinear hard-constraint violations: (sum of positives, max positive)."""
    l1, mx = 0.0, 0.0
    for i in range(problem.N):
        _, vals = ocp.tension_rows(inputs[i], problem.references[i], problem)
        for v in vals:
            if v > 0:
                l1 += v
                mx = max(mx, v)
    for i in range(problem.N + 1):
        _, vals = ocp.obstacle_rows(states[i], problem)
        for v in vals:
            if v > 0:
                l1 += v
                mx = max(mx, v)
    return l1, mx


def _merit(states, inputs, problem, mu_merit):
    cost = ocp.total_cost(states, inputs, problem)
    defects = ocp.dynamics_defects(states, inputs, problem)
    d1 = sum(float(np.sum(np.abs(d))) for d in defects)
    v1, _ = _constraint_violations(states, inputs, problem)
    return cost + mu_merit * (d1 + v1), cost, d1, v1


def _build_qp_data(states, inputs, problem, config, lam_u_prev=None) -> QpData:
    N = problem.N
    H_x, g_x, H_u, g_u = ocp.cost_expansion(states, inputs, problem)
    A, B, c = [], [], []
    for i in range(N):
        Ai, Bi = ocp.linearize_dynamics(
            states[i], inputs[i], problem.dt, problem, fd_step=config.fd_step
        )
        A.append(Ai)
        B.append(Bi)
        c.append(
            ocp.local_coords(
                states[i + 1], ocp.discretize(states[i], inputs[i], problem.dt, problem)
            )
        )
    Cx, cx = [], []
    for i in range(N + 1):
        if i == 0:
            # stage 0 is pinned to the measured state; constant rows there are
            # either trivially satisfied or a genuine infeasibility
            Cx.append(np.zeros((0, ocp.NX)))
            cx.append(np.zeros(0))
            continue
        J, v = ocp.obstacle_rows(states[i], problem)
        Cx.append(J)
        cx.append(v)
    Cu, cu = [], []
    for i in range(N):
        J, v = ocp.tension_rows(inputs[i], problem.references[i], problem)
        Cu.append(J)
        cu.append(v)
        if lam_u_prev is not None and i < len(lam_u_prev) and len(lam_u_prev[i]) == len(v):
            # lagged-multiplier curvature of the active rows keeps the outer
            # loop from stalling at the Gauss-Newton accuracy floor
            blocks = ocp.tension_row_hessians(inputs[i], problem.references[i], problem)
            for lam, Hc in zip(lam_u_prev[i], blocks):
                if lam > 1e-12:
                    H_u[i] = H_u[i] + lam * Hc
    return QpData(
        H_x=H_x, g_x=g_x, H_u=H_u, g_u=g_u, A=A, B=B, c=c,
        Cx=Cx, cx=cx, Cu=Cu, cu=cu, z0=np.zeros(ocp.NX),
    )


def _nonlinear_kkt(data: QpData, result: QpResult) -> float:
    """Stationarity of the nonlinear problem at the current nominal, using
    the freshest QP duals (all primal steps evaluated at zero)."""
    N = data.N
    zeros_z = [np.zeros(len(data.z0)) for _ in range(N + 1)]
    zeros_w = [np.zeros(len(g)) for g in data.g_u]
    r_stat, _, _, _ = _qp_residuals(
        data, zeros_z, zeros_w, result.nu, result.lam_x, result.lam_u,
        [np.zeros(len(v)) for v in data.cx], [np.zeros(len(v)) for v in data.cu], 0.0
    )
    return _max_norm(r_stat)


def solve(
    problem,
    warm: Optional[WarmStart] = None,
    config: Optional[SolverConfig] = None,
    trace: Optional[list] = None,
) -> ocp.OcpSolution:
    """Solve the tracking problem; returns the best iterate found.

    status is "converged" when stationarity reaches kkt_tol with defects and
    hard constraints inside feas_tol, otherwise "max_iter".  Raises
    Infeasible when the constraint rows are inconsistent (including an
    initial state already violating a hard row, which no control can undo).
    When trace is a list, one dict per outer iteration is appended with the
    incumbent merit, cost, stationarity, and accepted step length.
    """
    config = config or SolverConfig()
    _, v0 = ocp.obstacle_rows(problem.x0, problem)
    if len(v0) and np.max(v0) > config.feas_tol:
        raise Infeasible(
            f"initial state violates obstacle clearance by {float(np.max(v0)):.3g} m"
        )

    start = warm or _cold_start(problem)
    states = [s.copy() for s in start.states]
    inputs = [ocp.Wrench(u.F.copy(), u.M.copy()) for u in start.inputs]
    if len(states) != problem.N + 1 or len(inputs) != problem.N:
        raise ocp.DimensionMismatch("warm start does not match the horizon")
    states[0] = problem.x0.copy()

    mu_merit = config.merit_weight
    best = None
    it = 0
    lam_u_prev = None
    for it in range(1, config.max_sqp_iters + 1):
        data = _build_qp_data(states, inputs, problem, config, lam_u_prev)
        result = qp_subproblem(data, config)
        lam_u_prev = result.lam_u
        mu_merit = max(
            mu_merit,
            1.1 * max(_max_norm(result.nu), _max_norm(result.lam_x), _max_norm(result.lam_u)),
        )

        kkt = _nonlinear_kkt(data, result)
        defect_max = _max_norm(data.c)
        _, viol_max = _constraint_violations(states, inputs, problem)
        phi0, cost0, d0, v0l1 = _merit(states, inputs, problem, mu_merit)
        if best is None or phi0 < best[0]:
            best = (phi0, [s.copy() for s in states],
                    [ocp.Wrench(u.F.copy(), u.M.copy()) for u in inputs], kkt)
        if trace is not None:
            trace.append({"merit": phi0, "cost": cost0, "kkt": kkt, "alpha": 0.0})
        if kkt <= config.kkt_tol and defect_max <= config.feas_tol and viol_max <= config.feas_tol:
            return ocp.OcpSolution(
                states=states, inputs=inputs, cost=cost0,
                kkt_residual=kkt, iterations=it, status="converged",
            )

        # L1 merit line search along the QP step.  From an exactly feasible
        # iterate the step is a descent direction for the cost model, so cost
        # decrease is additionally enforced there; while closing defects or
        # constraint violations the merit alone governs acceptance.
        dgrad = sum(float(data.g_x[i] @ result.z[i]) for i in range(problem.N + 1))
        dgrad += sum(float(data.g_u[i] @ result.w[i]) for i in range(problem.N))
        dphi = dgrad - mu_merit * (d0 + v0l1)
        feasible_now = (d0 + v0l1) <= 1e-12
        slack = 1e-12 * max(1.0, abs(phi0))
        alpha = 1.0
        accepted = False
        while alpha >= config.min_step:
            cand_states = [states[0].copy()] + [
                ocp.retract(states[i], alpha * result.z[i]) for i in range(1, problem.N + 1)
            ]
            cand_inputs = [
                ocp.Wrench.from_vector(inputs[i].as_vector() + alpha * result.w[i])
                for i in range(problem.N)
            ]
            phi, cand_cost, _, _ = _merit(cand_states, cand_inputs, problem, mu_merit)
            target = phi0 + config.armijo * alpha * min(dphi, 0.0)
            ok = phi <= target and phi <= phi0 + slack
            if ok and feasible_now:
                ok = cand_cost <= cost0 + slack
            if ok:
                states, inputs = cand_states, cand_inputs
                if phi < best[0]:
                    best = (phi, [s.copy() for s in states],
                            [ocp.Wrench(u.F.copy(), u.M.copy()) for u in inputs], None)
                accepted = True
                break
            alpha *= config.backtrack
        if trace is not None:
            trace[-1]["alpha"] = alpha if accepted else 0.0
        if not accepted:
            break  # stalled: no descent at the minimum step

    _, best_states, best_inputs, best_kkt = best
    if best_kkt is None:
        # best iterate was accepted on the final pass; price its stationarity
        data = _build_qp_data(best_states, best_inputs, problem, config)
        best_kkt = _nonlinear_kkt(data, qp_subproblem(data, config))
    return ocp.OcpSolution(
        states=best_states, inputs=best_inputs,
        cost=ocp.total_cost(best_states, best_inputs, problem),
        kkt_residual=best_kkt, iterations=it, status="max_iter",
    )
