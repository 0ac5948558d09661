"""Multi-modal prediction of surrounding vehicles.

Each surrounding vehicle is a hybrid agent: a discrete maneuver state driven
by a stochastic policy, and a continuous state ``[x, y, vx]`` that follows
mode-dependent affine dynamics with Gaussian process noise.  Action sequences
whose cumulative probability falls below a threshold are pruned, the rest are
propagated (mean and covariance) and form the agent's reachability set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .maneuver import ACTIONS, ManeuverAction, ManeuverState, Policy, TransitionTable

LANE_SNAP_TOL = 0.2  # m; a lane change is complete once within this of the target center


class NonPsdInput(ValueError):
    """Covariance input is not symmetric positive semidefinite."""


class EmptyScenarioTree(RuntimeError):
    """No action sequence survives the cumulative probability threshold."""


@dataclass(frozen=True)
class SaParams:
    T_h: float = 0.8
    K1: float = 3.0
    K2: float = 1.0
    a_avg: float = 2.0
    lane_width: float = 4.0
    Xi: tuple = ((0.05, 0.0, 0.0), (0.0, 0.05, 0.0), (0.0, 0.0, 0.01))

    @property
    def xi(self) -> np.ndarray:
        return np.asarray(self.Xi, dtype=float)

    def lane_center(self, lane: int) -> float:
        # lane 2 on y = 0, lane 1 to the left (positive y)
        return (2 - lane) * self.lane_width


@dataclass(frozen=True)
class SaContinuousState:
    x: float
    y: float
    vx: float
    vy: float = 0.0

    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx])


@dataclass(frozen=True)
class ModeDynamics:
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    Xi: np.ndarray
    lane_change: bool = False


def mode_dynamics(a_lat: int, s_long: int, params: SaParams, y: float = 0.0, vy: float = 0.0,
                  y_ref: Optional[float] = None, T: Optional[float] = None) -> ModeDynamics:
    """Affine dynamics for one lateral action / longitudinal phase.

    Lane keeping uses the double integrator in ``x``.  A lane change adds the
    PD lateral proxy: the ``-K1 y`` part sits in ``A[1, 1]`` and the reference
    part ``K1 y_ref - K2 vy`` is the second entry of ``F``, so the closed loop
    settles on ``y_ref``.  ``y`` is only used to infer ``y_ref`` when it is
    not given (adjacent lane center in the direction of ``a_lat``).
    """
    T = params.T_h if T is None else T
    if T <= 0:
        raise ValueError("sampling period must be positive")
    A = np.array([[1.0, 0.0, T], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    B = np.array([[0.5 * T * T, 0.0], [0.0, 0.0], [T, 0.0]])
    a_x = s_long * params.a_avg
    if a_lat == 0:
        F = np.array([a_x, 0.0])
        return ModeDynamics(A, B, F, params.xi, False)
    A[1, 1] = 1.0 - 0.5 * params.K1 * T * T
    B[1, 1] = 0.5 * T * T
    if y_ref is None:
        lane = round(2 - y / params.lane_width)
        y_ref = params.lane_center(lane + int(np.sign(a_lat)))
    u_ref = params.K1 * y_ref + params.K2 * (0.0 - vy)
    return ModeDynamics(A, B, np.array([a_x, u_ref]), params.xi, True)


def propagate_mean(x: SaContinuousState, d: ModeDynamics) -> SaContinuousState:
    """Noise-free one-step mean ``A x + B F``; ``vy`` is carried unchanged."""
    nxt = d.A @ x.vector() + d.B @ d.F
    return SaContinuousState(float(nxt[0]), float(nxt[1]), float(nxt[2]), x.vy)


def check_psd(Q: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (3, 3):
        raise NonPsdInput(f"expected a 3x3 covariance, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)) or np.max(np.abs(Q - Q.T)) > tol:
        raise NonPsdInput("covariance is not symmetric")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -tol:
        raise NonPsdInput("covariance has a negative eigenvalue")
    return Q


def propagate_covariance(Q: np.ndarray, d: ModeDynamics) -> np.ndarray:
    Q = check_psd(Q)
    out = d.A @ Q @ d.A.T + d.Xi
    return 0.5 * (out + out.T)


def step_dynamics(s: ManeuverState, a: ManeuverAction, nxt: ManeuverState, x: SaContinuousState,
                  params: SaParams, T: Optional[float] = None) -> ModeDynamics:
    """Dynamics for taking ``a`` in ``s`` (landing in ``nxt``) from continuous state ``x``.

    The longitudinal input follows the phase held while the action is taken.
    A lateral move keeps lane-change dynamics active until the vehicle is
    within ``LANE_SNAP_TOL`` of its target lane center.
    """
    y_ref = params.lane_center(nxt.lane)
    if a.lat != 0:
        lat = a.lat
    elif abs(x.y - y_ref) >= LANE_SNAP_TOL:
        lat = 1 if x.y > y_ref else -1
    else:
        lat = 0
    return mode_dynamics(lat, s.long, params, x.y, x.vy, y_ref=y_ref, T=T)


@dataclass(frozen=True)
class PredictionBranch:
    actions: tuple[ManeuverAction, ...]
    states: tuple[ManeuverState, ...]  # successor states, one per step
    means: tuple[SaContinuousState, ...]
    covariances: tuple[np.ndarray, ...]
    probability: float

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {
            "actions": [a.symbol for a in self.actions],
            "states": [s.symbol for s in self.states],
            "probability": self.probability,
            "means": [[m.x, m.y, m.vx] for m in self.means],
            "covariances": [c.tolist() for c in self.covariances],
            "ellipses_2sigma": [ellipse(c) for c in self.covariances],
        }


def ellipse(Q: np.ndarray, n_sigma: float = 2.0) -> dict:
    """Semi-axes and orientation of the ``n_sigma`` ellipse of the (x, y) block."""
    vals, vecs = np.linalg.eigh(np.asarray(Q)[:2, :2])
    vals = np.clip(vals, 0.0, None)
    major = int(np.argmax(vals))
    return {
        "semi_major": float(n_sigma * math.sqrt(vals[major])),
        "semi_minor": float(n_sigma * math.sqrt(vals[1 - major])),
        "angle": float(math.atan2(vecs[1, major], vecs[0, major])),
    }


@dataclass(frozen=True)
class ReachabilitySet:
    agent_id: str
    branches: tuple[PredictionBranch, ...]
    horizon: int = field(default=0)

    def __len__(self):
        return len(self.branches)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-branch longitudinal means, x-variances and target lanes, shape ``(M, H)``."""
        H = self.horizon or (self.branches[0].horizon if self.branches else 0)
        M = len(self.branches)
        xs = np.empty((M, H))
        var = np.empty((M, H))
        lanes = np.empty((M, H), dtype=np.int64)
        for i, b in enumerate(self.branches):
            for j in range(H):
                xs[i, j] = b.means[j].x
                var[i, j] = b.covariances[j][0, 0]
                lanes[i, j] = b.states[j].lane
        return xs, var, lanes

    def to_dict(self) -> dict:
        return {"agent_id": self.agent_id, "horizon": self.horizon,
                "branches": [b.to_dict() for b in self.branches]}


def enumerate_branches(s0: ManeuverState, x0: SaContinuousState, Q0: np.ndarray, policy: Policy,
                       table: TransitionTable, H: int, delta_seq: float, params: SaParams,
                       agent_id: str = "sv") -> ReachabilitySet:
    """Depth-first enumeration of action sequences with prefix pruning.

    Per-step probabilities are at most one, so a prefix whose product is
    already below ``delta_seq`` cannot recover and its subtree is skipped.
    Probabilities are the raw policy products (no renormalization).
    """
    if H < 1:
        raise ValueError("horizon must be at least one step")
    if not 0.0 <= delta_seq <= 1.0:
        raise ValueError("delta_seq must lie in [0, 1]")
    Q0 = check_psd(Q0)
    out: list[PredictionBranch] = []

    def dfs(s, x, Q, prob, acts, states, means, covs):
        if len(acts) == H:
            out.append(PredictionBranch(tuple(acts), tuple(states), tuple(means), tuple(covs), prob))
            return
        row = policy.row(s)
        for a, p in zip(ACTIONS, row):
            if p <= 0.0:
                continue
            q = prob * p
            if q < delta_seq:
                continue
            nxt = table.successors[(s, a)]
            if nxt is None:
                continue
            d = step_dynamics(s, a, nxt, x, params)
            x1 = propagate_mean(x, d)
            Q1 = propagate_covariance(Q, d)
            dfs(nxt, x1, Q1, q, acts + [a], states + [nxt], means + [x1], covs + [Q1])

    dfs(s0, x0, Q0, 1.0, [], [], [], [])
    if not out:
        raise EmptyScenarioTree(f"no action sequence of {agent_id} reaches probability {delta_seq}")
    return ReachabilitySet(agent_id, tuple(out), H)


def combine_arrays(reach_sets: Sequence[ReachabilitySet], H: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
    """Stack every branch of every agent into ``(M, H)`` arrays plus an index of ``(agent, branch)``."""
    xs, var, lanes, index = [], [], [], []
    for rs in reach_sets:
        if not rs.branches:
            continue
        a, b, c = rs.arrays()
        xs.append(a)
        var.append(b)
        lanes.append(c)
        index.extend((rs.agent_id, i) for i in range(len(rs.branches)))
    if not xs:
        return np.empty((0, H)), np.empty((0, H)), np.empty((0, H), dtype=np.int64), []
    return np.vstack(xs), np.vstack(var), np.vstack(lanes), index
