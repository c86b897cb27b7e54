"""Event logic deciding when the payload controller re-solves its OCP.

Between solves the stored prediction is replayed open loop.  A new solve is
forced when the prediction runs out, and happens early when the measured
state drifts too far from the predicted one, subject to a minimum
inter-execution time of sigma steps.  Deviations and state magnitudes are
measured with the plain Euclidean norm on the 12-dimensional error embedding
(position, velocity, attitude logarithm, angular rate).

After each trigger the prediction horizon may shrink: once the previous
prediction is known to enter the terminal region at index N_hat, the steps
already burned and the tail beyond N_hat can both be dropped, bounded so the
new prediction window always extends strictly past the old one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import payload_ocp as ocp
from . import so3


class PredictionGap(RuntimeError):
    """Asked for a step beyond the stored prediction."""


class InvariantViolation(RuntimeError):
    """The horizon-chain guarantee failed; indicates a programming error."""


def lipschitz_constant(a: float, b: float, rho: float) -> float:
    """Growth bound sqrt(2 (a^2 + rho^2 b^2)) of the prediction dynamics."""
    if a < 0 or b < 0 or rho < 0:
        raise ValueError("Lipschitz parameters must be nonnegative")
    return math.sqrt(2.0 * (a * a + rho * rho * b * b))


@dataclass
class TriggerConfig:
    alpha: float = 0.10
    beta: float = 0.05
    sigma: int = 2
    eta: float = 0.0
    lipschitz: tuple = (1.0, 0.0, 0.0)
    delta: float = 0.05
    mode: str = "relative"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.sigma < 1:
            raise ValueError("sigma must be at least one step")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.mode not in ("relative", "theoretical"):
            raise ValueError(f"unknown trigger mode {self.mode!r}")
        self.L_P = lipschitz_constant(*self.lipschitz)


@dataclass
class TriggerState:
    k_j: int
    predicted: ocp.OcpSolution
    N_kj: int
    trigger_count: int


@dataclass
class TerminalRegion:
    epsilon: float
    weight: np.ndarray

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("terminal radius must be positive")
        self.weight = np.asarray(self.weight, dtype=np.float64)

    def contains(self, error: np.ndarray) -> bool:
        return math.sqrt(float(error @ self.weight @ error)) <= self.epsilon


def theoretical_threshold(m: int, config: TriggerConfig) -> float:
    """Disturbance-accumulation threshold sigma eta e^{L_P delta (sigma-1)}.

    Constant in m (the bound caps the comparison at m = sigma); m is
    validated because callers index the elapsed-step count with it.
    """
    if m < 1:
        raise ValueError("elapsed step count must be at least 1")
    return config.sigma * config.eta * math.exp(
        config.L_P * config.delta * (config.sigma - 1)
    )


def state_embedding(x: ocp.OcpState) -> np.ndarray:
    """12-d vector (p, v, log q, omega) used for trigger norms."""
    return np.concatenate([x.p, x.v, so3.quat_log(x.q), x.omega])


def should_trigger(
    k: int, current: ocp.OcpState, trigger_state: TriggerState, config: TriggerConfig
) -> str:
    """Decide "none", "event", or "forced" at step k.

    Forced exactly when the prediction is exhausted (k = k_j + N_kj).  An
    event needs at least sigma elapsed steps and a deviation strictly above
    the threshold; a deviation exactly on the threshold does not trigger.
    """
    idx = k - trigger_state.k_j
    if idx < 0:
        raise ValueError("step precedes the last trigger")
    if idx > len(trigger_state.predicted.states) - 1:
        raise PredictionGap(
            f"step {k} is {idx} past trigger {trigger_state.k_j}, prediction "
            f"holds {len(trigger_state.predicted.states)} states"
        )
    if idx == trigger_state.N_kj:
        return "forced"
    if idx < config.sigma:
        return "none"
    deviation = float(
        np.linalg.norm(ocp.local_coords(trigger_state.predicted.states[idx], current))
    )
    if config.mode == "relative":
        threshold = config.alpha * float(np.linalg.norm(state_embedding(current))) + config.beta
    else:
        threshold = theoretical_threshold(idx, config)
    return "event" if deviation > threshold else "none"


def first_entry_index(
    predicted: ocp.OcpSolution, region: TerminalRegion, references
) -> Optional[int]:
    """Smallest index in [0, N_kj - 1] whose error sits inside the region."""
    for i in range(len(predicted.states) - 1):
        if region.contains(ocp.state_error(predicted.states[i], references[i])):
            return i
    return None


def shrink_horizon(
    trigger_state: TriggerState,
    m_k: int,
    N_hat: Optional[int],
    config: TriggerConfig,
) -> int:
    """New horizon after a trigger m_k steps past the previous one.

    Shrinks by n = min(m_k - 1, N_kj - N_hat), with N_hat defaulting to the
    full horizon (no terminal-region entry, no shrink from that side), then
    floors at max(2, sigma).  The chain k_j + N_kj < k_{j+1} + N_{k_{j+1}}
    <= k_{j+1} + N_kj is re-checked on every call.
    """
    N_kj = trigger_state.N_kj
    if not (config.sigma <= m_k <= N_kj):
        raise ValueError(f"elapsed steps {m_k} outside [{config.sigma}, {N_kj}]")
    if N_hat is not None and not (0 <= N_hat <= N_kj):
        raise ValueError("entry index outside the prediction")
    effective = N_kj if N_hat is None else N_hat
    n = min(m_k - 1, N_kj - effective)
    new_horizon = max(N_kj - n, max(2, config.sigma))
    if not (N_kj < m_k + new_horizon and new_horizon <= N_kj):
        raise InvariantViolation(
            f"horizon chain broken: N_kj={N_kj}, m_k={m_k}, new={new_horizon}"
        )
    return new_horizon


def record_trigger(
    trigger_state: Optional[TriggerState],
    k: int,
    solution: ocp.OcpSolution,
    new_horizon: int,
) -> TriggerState:
    """Bookkeeping after a solve at step k; pass None at initialization."""
    if len(solution.states) - 1 != new_horizon:
        raise ValueError(
            f"solution spans {len(solution.states) - 1} steps, expected {new_horizon}"
        )
    count = 1 if trigger_state is None else trigger_state.trigger_count + 1
    return TriggerState(k_j=k, predicted=solution, N_kj=new_horizon, trigger_count=count)
