"""Tracking errors, formation separations, and constraint checking.

Everything here is pure geometry on snapshots: line-of-sight distances for the
payload and each vehicle, pairwise separation errors for the formation,
obstacle clearance, and cable-tension bounds.  Violations are reported as
signed margins, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class FunnelSpec:
    """Time-varying positive bound given as a piecewise-linear table.

    `table` is a sequence of (time s, value m) pairs with strictly increasing
    times and strictly positive values; evaluation clamps outside the table.
    """

    table: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if len(self.table) == 0:
            raise ValueError("funnel table must not be empty")
        times = np.array([t for t, _ in self.table], dtype=np.float64)
        values = np.array([v for _, v in self.table], dtype=np.float64)
        if np.any(values <= 0.0):
            raise ValueError("funnel values must be strictly positive")
        if len(times) > 1 and np.any(np.diff(times) <= 0.0):
            raise ValueError("funnel times must be strictly increasing")

    @classmethod
    def constant(cls, value: float) -> "FunnelSpec":
        return cls(((0.0, float(value)),))

    def value(self, t: float) -> float:
        times = [p[0] for p in self.table]
        values = [p[1] for p in self.table]
        return float(np.interp(t, times, values))


@dataclass(frozen=True)
class ConstraintEntry:
    """One evaluated constraint: margin >= 0 exactly when satisfied."""

    id: str
    value: float
    lower: Optional[float]
    upper: Optional[float]
    margin: float

    @property
    def satisfied(self) -> bool:
        return self.margin >= 0.0


@dataclass
class ConstraintReport:
    entries: List[ConstraintEntry] = field(default_factory=list)

    @property
    def all_satisfied(self) -> bool:
        return all(e.satisfied for e in self.entries)

    def __getitem__(self, id: str) -> ConstraintEntry:
        for e in self.entries:
            if e.id == id:
                return e
        raise KeyError(id)

    def worst(self) -> ConstraintEntry:
        return min(self.entries, key=lambda e: e.margin)


def payload_los_error(p_L: np.ndarray, p_des: np.ndarray) -> float:
    """Line-of-sight distance between actual and desired payload position."""
    return float(np.linalg.norm(np.asarray(p_L) - np.asarray(p_des)))


def mav_los_error(p_i: np.ndarray, p_des_i: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(p_i) - np.asarray(p_des_i)))


def pair_separation(p_i: np.ndarray, p_j: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(p_i) - np.asarray(p_j)))


def desired_pair_separation(p_des_i: np.ndarray, p_des_j: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(p_des_i) - np.asarray(p_des_j)))


def separation_error(
    p_des_i: np.ndarray, p_des_j: np.ndarray, p_i: np.ndarray, p_j: np.ndarray
) -> float:
    """Desired minus actual inter-vehicle distance.

    Positive means the pair is closer than intended, negative means the
    formation is overstretched; the two-sided bound in check_all treats the
    directions separately.
    """
    return desired_pair_separation(p_des_i, p_des_j) - pair_separation(p_i, p_j)


def obstacle_distance(p_L: np.ndarray, p_O: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(p_L) - np.asarray(p_O)))


@dataclass
class ConstraintBounds:
    """Bound set consumed by check_all.

    pair_tighten/pair_widen map vehicle index pairs (i < j) to the allowed
    shrink/stretch of that pair's separation relative to desired.
    """

    f_max: float
    payload_funnel: FunnelSpec
    mav_funnel: FunnelSpec
    pair_tighten: Dict[Tuple[int, int], FunnelSpec] = field(default_factory=dict)
    pair_widen: Dict[Tuple[int, int], FunnelSpec] = field(default_factory=dict)
    obstacle_center: Optional[np.ndarray] = None
    obstacle_clearance: float = 0.0


def default_bounds(
    mav_p_des0: np.ndarray,
    f_max: float,
    payload_radius: float = 0.2,
    mav_radius: float = 0.2,
    pair_fraction: float = 0.3,
    obstacle_center: Optional[np.ndarray] = None,
    obstacle_clearance: float = 0.0,
) -> ConstraintBounds:
    """Constant funnels sized off the initial desired formation.

    Pair bounds default to pair_fraction times each pair's desired
    separation, symmetric in both directions.
    """
    n = len(mav_p_des0)
    tighten = {}
    widen = {}
    for i in range(n):
        for j in range(i + 1, n):
            width = pair_fraction * desired_pair_separation(mav_p_des0[i], mav_p_des0[j])
            tighten[(i, j)] = FunnelSpec.constant(width)
            widen[(i, j)] = FunnelSpec.constant(width)
    return ConstraintBounds(
        f_max=f_max,
        payload_funnel=FunnelSpec.constant(payload_radius),
        mav_funnel=FunnelSpec.constant(mav_radius),
        pair_tighten=tighten,
        pair_widen=widen,
        obstacle_center=None if obstacle_center is None else np.asarray(obstacle_center),
        obstacle_clearance=obstacle_clearance,
    )


def check_all(
    t: float,
    payload_p: np.ndarray,
    payload_p_des: np.ndarray,
    mav_p: np.ndarray,
    mav_p_des: np.ndarray,
    tensions: np.ndarray,
    bounds: ConstraintBounds,
) -> ConstraintReport:
    """Evaluate every tracking, formation, obstacle, and tension constraint.

    Margins are signed distances to the nearest bound; a violated constraint
    shows up with margin < 0, nothing raises.
    """
    report = ConstraintReport()
    n = len(mav_p)

    e_L = payload_los_error(payload_p, payload_p_des)
    eps = bounds.payload_funnel.value(t)
    report.entries.append(ConstraintEntry("payload_funnel", e_L, None, eps, eps - e_L))

    for i in range(n):
        e_i = mav_los_error(mav_p[i], mav_p_des[i])
        eps_i = bounds.mav_funnel.value(t)
        report.entries.append(
            ConstraintEntry(f"mav{i}_funnel", e_i, None, eps_i, eps_i - e_i)
        )

    for i in range(n):
        for j in range(i + 1, n):
            e_ij = separation_error(mav_p_des[i], mav_p_des[j], mav_p[i], mav_p[j])
            hi = bounds.pair_tighten.get((i, j))
            lo = bounds.pair_widen.get((i, j))
            if hi is None and lo is None:
                continue
            eps_h = hi.value(t) if hi is not None else np.inf
            eps_w = lo.value(t) if lo is not None else np.inf
            margin = min(eps_h - e_ij, e_ij + eps_w)
            report.entries.append(
                ConstraintEntry(f"separation_{i}_{j}", e_ij, -eps_w, eps_h, margin)
            )

    for i in range(n):
        T = float(tensions[i])
        report.entries.append(
            ConstraintEntry(f"tension_{i}", T, None, bounds.f_max, bounds.f_max - T)
        )

    if bounds.obstacle_center is not None:
        e_LO = obstacle_distance(payload_p, bounds.obstacle_center)
        report.entries.append(
            ConstraintEntry(
                "obstacle",
                e_LO,
                bounds.obstacle_clearance,
                None,
                e_LO - bounds.obstacle_clearance,
            )
        )

    return report
