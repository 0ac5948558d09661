"""Ground-truth vehicle motion at the low-level period.

The ego vehicle is a kinematic bicycle driven by a saturated proportional
tracking controller; surrounding vehicles follow the same affine
mode-dependent model used for their prediction, with sampled process noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .prediction import ModeDynamics, SaContinuousState


class BicycleState(NamedTuple):
    x: float
    y: float
    psi: float
    v: float


class TrackingCommand(NamedTuple):
    accel: float
    steer: float


class TrackingReference(NamedTuple):
    y_ref: float
    v_ref: float
    vy_ref: float = 0.0  # lateral velocity feedforward
    ay_ref: float = 0.0  # lateral acceleration feedforward
    a_ref: float = 0.0  # longitudinal acceleration feedforward


@dataclass(frozen=True)
class PlantParams:
    """Vehicle limits and tracking gains.

    With ``speed_scheduled`` the lateral gains are dimensionless and scaled by
    ``wheelbase / v**2``, which keeps the closed-loop lateral bandwidth
    independent of speed; otherwise they are used as rad/m and rad s/m.
    """

    wheelbase: float = 2.7
    a_max: float = 4.0
    steer_max: float = 0.5
    kp_v: float = 2.0
    kp_y: float = 3.0
    kd_y: float = 4.0
    speed_scheduled: bool = True


def bicycle_step(s: BicycleState, u: TrackingCommand, T_l: float, wheelbase: float = 2.7) -> BicycleState:
    if T_l <= 0:
        raise ValueError("T_l must be positive")
    x = s.x + s.v * math.cos(s.psi) * T_l
    y = s.y + s.v * math.sin(s.psi) * T_l
    psi = s.psi + s.v / wheelbase * math.tan(u.steer) * T_l
    v = max(0.0, s.v + u.accel * T_l)
    return BicycleState(x, y, psi, v)


def _clip(v, lim):
    return max(-lim, min(lim, v))


def track(s: BicycleState, ref: TrackingReference, gains: PlantParams = PlantParams()) -> TrackingCommand:
    accel = ref.a_ref + gains.kp_v * (ref.v_ref - s.v)
    kp, kd, ff = gains.kp_y, gains.kd_y, 0.0
    if gains.speed_scheduled:
        v2 = max(s.v, 1.0) ** 2
        kp, kd = kp * gains.wheelbase / v2, kd * gains.wheelbase / v2
        ff = gains.wheelbase * ref.ay_ref / v2
    steer = kp * (ref.y_ref - s.y) + kd * (ref.vy_ref - s.v * math.sin(s.psi)) + ff
    return TrackingCommand(_clip(accel, gains.a_max), _clip(steer, gains.steer_max))


def sv_step_truth(x: SaContinuousState, d: ModeDynamics, rng: np.random.Generator,
                  T: float | None = None) -> SaContinuousState:
    """Advance a surrounding vehicle one step with ``w ~ N(0, Xi)``.

    The same generator state always yields the same draw; with ``Xi = 0`` the
    result equals the noise-free prediction mean.
    """
    mean = d.A @ x.vector() + d.B @ d.F
    xi = np.asarray(d.Xi, dtype=float)
    w = np.zeros(3)
    if np.any(xi):
        vals, vecs = np.linalg.eigh(0.5 * (xi + xi.T))
        w = vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * rng.standard_normal(3))
    else:
        rng.standard_normal(3)  # keep the stream aligned regardless of noise level
    nxt = mean + w
    vy = x.vy if T is None else (mean[1] - x.y) / T
    return SaContinuousState(float(nxt[0]), float(nxt[1]), float(nxt[2]), float(vy))
