"""Ego-vehicle HMDP-MPC over discrete maneuver sequences.

The horizon is short (H <= 3 gives at most 729 sequences), so the mixed
integer program is solved exactly by enumeration.  Everything that depends
only on the discrete sequence (mode indicators, lane targets, position
offsets, lateral profile) is tabulated once per starting discrete condition
and reused; per tick only the affine dependence on ``(x0, vx0)`` and the
safety check against the surrounding-vehicle branches remain.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .chance import ConstraintMargin, quantile, safety_constraints
from .maneuver import (ACTIONS, InfeasibleTransition, ManeuverAction, ManeuverState,
                       TransitionTable)
from .prediction import ReachabilitySet, combine_arrays

log = logging.getLogger(__name__)

QUINTIC = (10.0, -15.0, 6.0)
LONG_ROW = {1: 0, 0: 1, -1: 2}  # acc, cru, dec
LAT_COL = {-1: 0, 0: 1, 1: 2}  # left, keep, right


class NoFeasibleSequence(RuntimeError):
    pass


@dataclass(frozen=True)
class CostTable:
    """Maneuver cost ``c[m][n]``: rows acc/cru/dec phase, columns left/keep/right."""

    c: tuple

    def __post_init__(self):
        arr = np.asarray(self.c, dtype=float)
        if arr.shape != (3, 3):
            raise ValueError("cost table must be 3x3")
        if np.any(arr < 0):
            raise ValueError("cost coefficients must be nonnegative")
        zeros = list(zip(*np.nonzero(arr == 0)))
        if zeros != [(1, 1)]:
            raise ValueError("keep-lane cruise must be the unique zero-cost cell")
        object.__setattr__(self, "c", tuple(tuple(float(v) for v in row) for row in arr))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.c)

    def cell(self, long_mode: int, lat: int) -> float:
        return self.c[LONG_ROW[long_mode]][LAT_COL[lat]]

    def scaled(self, k: float) -> "CostTable":
        return CostTable(tuple(tuple(k * v for v in row) for row in self.c))


CASE1_COSTS = CostTable(((6, 5, 6), (2, 0, 2), (11, 9, 11)))


@dataclass(frozen=True)
class EvParams:
    T_h: float = 0.8
    a_avg: float = 2.0
    lane_width: float = 4.0
    lc_duration: float = 3.2
    quintic: tuple = QUINTIC

    @property
    def lc_steps(self) -> int:
        n = self.lc_duration / self.T_h
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError(f"lane-change duration {self.lc_duration} is not a multiple of T_h={self.T_h}")
        return int(round(n))

    def lane_center(self, lane: int) -> float:
        return (2 - lane) * self.lane_width

    def profile(self, tau: float) -> float:
        c1, c2, c3 = self.quintic
        return c1 * tau ** 3 + c2 * tau ** 4 + c3 * tau ** 5


@dataclass(frozen=True)
class EvState:
    x: float
    y: float
    vx: float
    discrete: ManeuverState
    lc_progress: float = 0.0
    lc_dir: int = 0  # direction of the in-flight lane change, -1 left / +1 right

    @property
    def changing_lane(self) -> bool:
        return self.lc_dir != 0

    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx])


def ev_predict(s: EvState, a: ManeuverAction, params: EvParams, table: TransitionTable) -> EvState:
    """One high-level prediction step of the ego vehicle.

    While a lane change is in flight the lateral action must be ``0``; the
    lateral displacement keeps following the committed quintic profile.
    Positive ``y`` points to the left, so a left change raises ``y``.
    """
    if s.changing_lane and a.lat != 0:
        raise InfeasibleTransition("cannot start a lane change while one is in flight")
    nxt = table.next(s.discrete, a)
    T = params.T_h
    lon = nxt.long
    x = s.x + s.vx * T + 0.5 * lon * params.a_avg * T * T
    vx = s.vx + lon * params.a_avg * T
    direction = a.lat if a.lat != 0 else s.lc_dir
    progress, dy = s.lc_progress, 0.0
    if direction != 0:
        tau1 = min(1.0, progress + 1.0 / params.lc_steps)
        dy = -direction * params.lane_width * (params.profile(tau1) - params.profile(progress))
        progress = tau1
    if progress >= 1.0 - 1e-9:
        progress, direction = 0.0, 0
    return EvState(x, s.y + dy, vx, nxt, progress, direction)


def baseline_policy(s: ManeuverState) -> ManeuverAction:
    """Keep the lane and step the longitudinal phase back to cruise."""
    return ManeuverAction(0, -s.long)


def stage_cost(seq: Sequence[ManeuverAction], states: Sequence[ManeuverState], ct: CostTable) -> float:
    return sum(ct.cell(s.long, a.lat) for a, s in zip(seq, states))


def terminal_cost(s_H: ManeuverState, ct: CostTable, table: Optional[TransitionTable] = None,
                  max_steps: int = 16) -> float:
    """Cost-to-go of the baseline policy until any lane-keep cruise state is reached."""
    table = table or TransitionTable.default()
    total, s = 0.0, s_H
    for _ in range(max_steps):
        if s.long == 0:
            return total
        a = baseline_policy(s)
        s = table.next(s, a)
        total += ct.cell(s.long, a.lat)
    raise RuntimeError("baseline policy did not reach a cruise state")


def _remaining_lc_steps(s: EvState, params: EvParams) -> int:
    if not s.changing_lane:
        return 0
    return max(1, int(round((1.0 - s.lc_progress) * params.lc_steps)))


def enumerate_ev_sequences(s0: EvState, H: int, table: TransitionTable,
                           params: Optional[EvParams] = None) -> list[tuple[ManeuverAction, ...]]:
    """All table-feasible sequences, in lexicographic action-index order."""
    if H < 1:
        raise ValueError("horizon must be at least one step")
    params = params or EvParams()
    tpl = _template(s0.discrete, _remaining_lc_steps(s0, params), s0.lc_dir, H, table, params.lc_steps)
    return list(tpl.sequences)


@dataclass(frozen=True)
class _Template:
    sequences: tuple
    states: tuple
    lanes: np.ndarray  # (N, H) target lane after each step
    long: np.ndarray  # (N, H) longitudinal phase after each step
    lat_col: np.ndarray  # (N, H) cost column of each action
    x_coef: np.ndarray  # (N, H) sum of (j - i + 1/2) * long_i
    v_coef: np.ndarray  # (N, H) cumulative long phases
    terminal_state: tuple


@lru_cache(maxsize=4096)
def _template(s0: ManeuverState, lc_left: int, lc_dir: int, H: int, table: TransitionTable,
              lc_steps: int) -> _Template:
    seqs, states = [], []

    def dfs(s, left, acts, sts):
        if len(acts) == H:
            seqs.append(tuple(acts))
            states.append(tuple(sts))
            return
        for a in table.admissible(s):
            if left > 0 and a.lat != 0:
                continue
            nxt = table.successors[(s, a)]
            if left > 0:
                new_left = left - 1
            elif a.lat != 0:
                new_left = lc_steps - 1
            else:
                new_left = 0
            dfs(nxt, new_left, acts + [a], sts + [nxt])

    dfs(s0, lc_left, [], [])
    N = len(seqs)
    lanes = np.array([[s.lane for s in st] for st in states], dtype=np.int64).reshape(N, H)
    long = np.array([[s.long for s in st] for st in states], dtype=float).reshape(N, H)
    lat_col = np.array([[LAT_COL[a.lat] for a in seq] for seq in seqs], dtype=np.int64).reshape(N, H)
    j = np.arange(1, H + 1)
    weights = np.where(j[None, :] >= j[:, None], j[None, :] - j[:, None] + 0.5, 0.0)  # (i, j)
    x_coef = long @ weights
    v_coef = np.cumsum(long, axis=1)
    return _Template(tuple(seqs), tuple(states), lanes, long, lat_col, x_coef, v_coef,
                     tuple(st[-1] for st in states))


@dataclass(frozen=True)
class PlannerConfig:
    H: int = 3
    d_safe: float = 40.0
    epsilon: float = 0.05
    risk_split: bool = False
    v_min: float = 0.0
    v_max: float = math.inf
    ev: EvParams = field(default_factory=EvParams)
    table: TransitionTable = field(default_factory=TransitionTable.default)
    # optional speed tracking, cost per step and m/s of |v - v_des|; off by default
    speed_weight: float = 0.0
    v_des: Optional[float] = None


def speed_cost(speeds, cfg: PlannerConfig):
    """Speed-tracking term summed over the horizon (zero when disabled)."""
    v = np.asarray(speeds, dtype=float)
    if not cfg.speed_weight or cfg.v_des is None:
        return np.zeros(v.shape[:-1]) if v.ndim > 1 else 0.0
    return cfg.speed_weight * np.abs(v - cfg.v_des).sum(axis=-1)


@dataclass(frozen=True)
class MpcSolution:
    actions: tuple[ManeuverAction, ...]
    predicted: tuple[EvState, ...]
    stage_cost: float
    terminal_cost: float
    margins: tuple[ConstraintMargin, ...]
    feasible_count: int
    candidate_count: int = 0

    @property
    def cost(self) -> float:
        return self.stage_cost + self.terminal_cost

    @property
    def first_action(self) -> ManeuverAction:
        return self.actions[0]


def rollout(s0: EvState, seq: Sequence[ManeuverAction], params: EvParams,
            table: TransitionTable) -> tuple[EvState, ...]:
    out, s = [], s0
    for a in seq:
        s = ev_predict(s, a, params, table)
        out.append(s)
    return tuple(out)


def _epsilon(cfg: PlannerConfig, reach: Sequence[ReachabilitySet]) -> tuple[float, Optional[int]]:
    if not cfg.risk_split:
        return cfg.epsilon, None
    n = sum(len(rs.branches) for rs in reach) * cfg.H
    return cfg.epsilon, max(n, 1)


def evaluate_sequence(s0: EvState, seq: Sequence[ManeuverAction], reach: Sequence[ReachabilitySet],
                      ct: CostTable, cfg: PlannerConfig):
    """Feasibility, cost, margins and predicted states of one candidate.

    Returns ``None`` when the sequence is not table-feasible from ``s0``.
    """
    try:
        pred = rollout(s0, seq, cfg.ev, cfg.table)
    except InfeasibleTransition:
        return None
    eps, split = _epsilon(cfg, reach)
    margins = safety_constraints([(p.discrete, p.vector()) for p in pred], reach, cfg.d_safe, eps, split)
    speed_ok = all(cfg.v_min - 1e-9 <= p.vx <= cfg.v_max + 1e-9 for p in pred)
    feasible = speed_ok and all(m.satisfied for m in margins)
    sc = stage_cost(seq, [p.discrete for p in pred], ct) + float(speed_cost([p.vx for p in pred], cfg))
    tc = terminal_cost(pred[-1].discrete, ct, cfg.table)
    return feasible, sc + tc, tuple(margins), pred


@dataclass(frozen=True)
class _Candidates:
    tpl: _Template
    ego_x: np.ndarray
    ego_v: np.ndarray
    stage: np.ndarray
    term: np.ndarray
    sa: tuple
    eps: float
    split: Optional[int]

    @property
    def total(self) -> np.ndarray:
        return self.stage + self.term


def _candidates(s0: EvState, reach: Sequence[ReachabilitySet], ct: CostTable, cfg: PlannerConfig) -> _Candidates:
    H, T, ev = cfg.H, cfg.ev.T_h, cfg.ev
    tpl = _template(s0.discrete, _remaining_lc_steps(s0, ev), s0.lc_dir, H, cfg.table, ev.lc_steps)
    if not tpl.sequences:
        raise NoFeasibleSequence("no table-feasible sequence from the current state")
    steps = np.arange(1, H + 1) * T
    ego_x = s0.x + s0.vx * steps[None, :] + ev.a_avg * T * T * tpl.x_coef
    ego_v = s0.vx + ev.a_avg * T * tpl.v_coef
    ctab = ct.array
    stage = ctab[(1 - tpl.long).astype(np.int64), tpl.lat_col].sum(axis=1) + speed_cost(ego_v, cfg)
    term = np.array([terminal_cost(s, ct, cfg.table) for s in tpl.terminal_state])
    sa_x, sa_var, sa_lane, _ = combine_arrays(reach, H)
    eps, split = _epsilon(cfg, reach)
    z = quantile(eps / split if split else eps)
    tight = z * np.sqrt(np.clip(sa_var, 0.0, None))
    return _Candidates(tpl, ego_x, ego_v, stage, term, (sa_x, tight, sa_lane), eps, split)


def _finish(s0: EvState, cand: _Candidates, best: int, n_feasible: int, cfg: PlannerConfig,
            reach: Sequence[ReachabilitySet]) -> MpcSolution:
    seq = cand.tpl.sequences[best]
    pred = rollout(s0, seq, cfg.ev, cfg.table)
    margins = safety_constraints([(p.discrete, p.vector()) for p in pred], reach, cfg.d_safe, cand.eps,
                                 cand.split)
    return MpcSolution(seq, pred, float(cand.stage[best]), float(cand.term[best]), tuple(margins),
                       n_feasible, len(cand.tpl.sequences))


def solve(s0: EvState, reach: Sequence[ReachabilitySet], ct: CostTable,
          cfg: PlannerConfig = PlannerConfig()) -> MpcSolution:
    """Exact minimization over all table-feasible sequences.

    Ties are broken towards the lexicographically first sequence in action
    index order, which prefers keep-lane cruise early in the horizon.
    """
    cand = _candidates(s0, reach, ct, cfg)
    sa_x, tight, sa_lane = cand.sa
    feasible = kernels.sequence_feasibility(cand.ego_x, cand.tpl.lanes, sa_x, tight, sa_lane, float(cfg.d_safe))
    feasible &= np.all((cand.ego_v >= cfg.v_min - 1e-9) & (cand.ego_v <= cfg.v_max + 1e-9), axis=1)
    n_feasible = int(feasible.sum())
    if n_feasible == 0:
        raise NoFeasibleSequence(f"all {len(feasible)} candidate sequences violate a constraint")
    masked = np.where(feasible, cand.total, np.inf)
    best = int(np.flatnonzero(masked <= masked.min() + 1e-9)[0])
    return _finish(s0, cand, best, n_feasible, cfg, reach)


def solve_least_violation(s0: EvState, reach: Sequence[ReachabilitySet], ct: CostTable,
                          cfg: PlannerConfig = PlannerConfig()) -> MpcSolution:
    """Recovery choice when nothing is feasible: maximize the worst constraint slack.

    Slack is measured in metres on the tightened gap constraints (speed
    bounds count as violated by the bound excess); ties go to the cheaper
    sequence, then to the lexicographically first one.
    """
    cand = _candidates(s0, reach, ct, cfg)
    sa_x, tight, sa_lane = cand.sa
    N = len(cand.tpl.sequences)
    worst = np.full(N, np.inf)
    if len(sa_x):
        active = cand.tpl.lanes[:, None, :] == sa_lane[None, :, :]
        slack = np.abs(cand.ego_x[:, None, :] - sa_x[None, :, :]) - (cfg.d_safe + tight[None, :, :])
        worst = np.where(active, slack, np.inf).min(axis=(1, 2))
    speed = np.minimum(cand.ego_v - cfg.v_min, cfg.v_max - cand.ego_v).min(axis=1)
    worst = np.minimum(worst, np.where(speed < 0, speed, np.inf))
    top = worst.max()
    pool = np.flatnonzero(worst >= top - 1e-9)
    costs = cand.total[pool]
    best = int(pool[np.flatnonzero(costs <= costs.min() + 1e-9)[0]])
    return _finish(s0, cand, best, 0, cfg, reach)


def shifted_candidate(prev: MpcSolution) -> tuple[ManeuverAction, ...]:
    """Previous optimum shifted by one step, closed with the baseline action."""
    return tuple(prev.actions[1:]) + (baseline_policy(prev.predicted[-1].discrete),)


def with_discrete(s: EvState, discrete: ManeuverState) -> EvState:
    return replace(s, discrete=discrete)
