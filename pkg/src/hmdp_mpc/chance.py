"""Deterministic reformulation of affine-Gaussian chance constraints.

For ``h = c_ea . x_ea + c_sa . x_sa + c`` with ``x_sa ~ N(mean, Q)``,
``P(h >= 0) >= 1 - eps`` holds exactly when

    c_ea . x_ea + c_sa . mean + c >= Phi^-1(1 - eps) * sqrt(c_sa' Q c_sa).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from statistics import NormalDist
from typing import Callable, Optional, Sequence

import numpy as np

from .maneuver import ManeuverState
from .prediction import ReachabilitySet


class DomainError(ValueError):
    pass


class NonFiniteGradient(ArithmeticError):
    pass


_STD = NormalDist()


def normal_cdf(x: float) -> float:
    return _STD.cdf(x)


def inverse_normal_cdf(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0 or math.isnan(p):
        raise DomainError(f"quantile probability must lie in (0, 1), got {p}")
    return _STD.inv_cdf(p)


def quantile(epsilon: float) -> float:
    """Tightening factor ``Phi^-1(1 - epsilon)``; exactly zero at ``epsilon = 0.5``."""
    if epsilon == 0.5:
        return 0.0
    return inverse_normal_cdf(1.0 - epsilon)


@dataclass(frozen=True)
class AffineConstraint:
    c_ea: np.ndarray
    c_sa: np.ndarray
    c: float
    epsilon: float

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 0.5:
            raise DomainError(f"risk tolerance must lie in (0, 0.5], got {self.epsilon}")
        object.__setattr__(self, "c_ea", np.asarray(self.c_ea, dtype=float))
        object.__setattr__(self, "c_sa", np.asarray(self.c_sa, dtype=float))


@dataclass(frozen=True)
class ConstraintMargin:
    lhs: float
    required: float
    satisfied: bool
    sa_id: str = ""
    branch_id: int = -1
    step: int = -1

    @property
    def slack(self) -> float:
        return self.lhs - self.required

    def to_dict(self) -> dict:
        return asdict(self)


def reformulate(ac: AffineConstraint, x_ea, mean_sa, Q_sa, sa_id: str = "", branch_id: int = -1,
                step: int = -1) -> ConstraintMargin:
    Q = np.asarray(Q_sa, dtype=float)
    lhs = float(ac.c_ea @ np.asarray(x_ea, dtype=float) + ac.c_sa @ np.asarray(mean_sa, dtype=float) + ac.c)
    var = max(float(ac.c_sa @ Q @ ac.c_sa), 0.0)
    required = quantile(ac.epsilon) * math.sqrt(var)
    return ConstraintMargin(lhs, required, lhs >= required, sa_id, branch_id, step)


def _gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def linearize_surrogate(h: Callable, x_ea, nominal_sa, epsilon: float = 0.05,
                        step: float = 1e-5) -> AffineConstraint:
    """First-order surrogate of ``h(x_ea, x_sa)`` around ``(x_ea, nominal_sa)``.

    The ego state is deterministic, so its coefficients are the local slope
    as well; the offset absorbs the value at the expansion point.
    """
    x_ea = np.asarray(x_ea, dtype=float)
    x_bar = np.asarray(nominal_sa, dtype=float)
    h0 = float(h(x_ea, x_bar))
    if not math.isfinite(h0):
        raise NonFiniteGradient("constraint is not finite at the expansion point")
    g_ea = _gradient(lambda z: float(h(z, x_bar)), x_ea, step)
    g_sa = _gradient(lambda z: float(h(x_ea, z)), x_bar, step)
    if not (np.all(np.isfinite(g_ea)) and np.all(np.isfinite(g_sa))):
        raise NonFiniteGradient("finite-difference gradient is not finite")
    c = h0 - g_ea @ x_ea - g_sa @ x_bar
    return AffineConstraint(g_ea, g_sa, float(c), epsilon)


def gap_constraint(mu: float, d_safe: float, epsilon: float) -> AffineConstraint:
    """Lead form (ego ahead, ``mu > 0``) or follow form, on ``x`` only."""
    sign = 1.0 if mu > 0 else -1.0
    return AffineConstraint(np.array([sign, 0.0, 0.0]), np.array([-sign, 0.0, 0.0]), -d_safe, epsilon)


def safety_constraints(ego_pred: Sequence[tuple[ManeuverState, Sequence[float]]],
                       reach: Sequence[ReachabilitySet], d_safe: float, epsilon: float,
                       split: Optional[int] = None) -> list[ConstraintMargin]:
    """Lane-activated longitudinal gap constraints against every retained branch.

    ``split`` divides ``epsilon`` evenly over that many conjuncts (off by
    default: every conjunct gets the full ``epsilon``).
    """
    eps = epsilon / split if split else epsilon
    out = []
    for rs in reach:
        for b_id, br in enumerate(rs.branches):
            if br.horizon != len(ego_pred):
                raise ValueError("ego prediction and branch horizons differ")
            for j, ((s_ego, x_ego), s_sa, mean, Q) in enumerate(
                    zip(ego_pred, br.states, br.means, br.covariances)):
                if s_ego.lane != s_sa.lane:
                    continue
                mu = float(x_ego[0]) - mean.x
                m = reformulate(gap_constraint(mu, d_safe, eps), x_ego, mean.vector(), Q,
                                rs.agent_id, b_id, j + 1)
                if mu == 0.0 and m.satisfied:
                    # exact overlap is unsafe in either orientation
                    m = ConstraintMargin(m.lhs, m.lhs + 1e-12, False, m.sa_id, b_id, j + 1)
                out.append(m)
    return out
