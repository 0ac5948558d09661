"""Rule-based comparison controller: IDM car following with MOBIL lane changes.

IDM: Treiber, Hennecke and Helbing, Phys. Rev. E 62 (2000).
MOBIL: Kesting, Treiber and Helbing, Transp. Res. Rec. 1999 (2007).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

FREE_GAP = 1e9  # m; gaps at or beyond this are treated as a free road


@dataclass(frozen=True)
class IdmParams:
    v0: float = 30.0
    T: float = 1.5
    a: float = 2.0
    b: float = 3.0
    s0: float = 2.0
    delta_exp: float = 4.0
    b_emergency: float = 9.0
    length: float = 5.0  # vehicle length used to turn center spacing into a gap

    def __post_init__(self):
        for name in ("v0", "T", "a", "b", "s0", "delta_exp", "b_emergency"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IDM parameter {name} must be positive")


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    a_threshold: float = 0.1
    b_safe: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if self.b_safe <= 0:
            raise ValueError("b_safe must be positive")


def idm_accel(v: float, gap: float, dv: float, p: IdmParams) -> float:
    """IDM acceleration for speed ``v``, bumper gap ``gap`` and closing speed ``dv``."""
    free = 1.0 - (max(v, 0.0) / p.v0) ** p.delta_exp
    if gap >= FREE_GAP or math.isinf(gap):
        interaction = 0.0
    else:
        s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a * p.b)))
        interaction = (s_star / max(gap, 1e-3)) ** 2
    acc = p.a * (free - interaction)
    return max(-p.b_emergency, min(p.a, acc))


class Vehicle(NamedTuple):
    id: str
    lane: int
    x: float
    v: float


def _neighbors(lane: int, x: float, others: Iterable[Vehicle], exclude: str = ""):
    lead = follow = None
    for o in others:
        if o.lane != lane or o.id == exclude:
            continue
        if o.x > x and (lead is None or o.x < lead.x):
            lead = o
        elif o.x <= x and (follow is None or o.x > follow.x):
            follow = o
    return lead, follow


def accel_behind(me: Vehicle, lead: Optional[Vehicle], p: IdmParams) -> float:
    if lead is None:
        return idm_accel(me.v, FREE_GAP, 0.0, p)
    return idm_accel(me.v, lead.x - me.x - p.length, me.v - lead.v, p)


def mobil_decide(ego: Vehicle, others: Sequence[Vehicle], ip: IdmParams, mp: MobilParams,
                 lanes: Iterable[int] = (1, 2, 3)) -> str:
    """Return ``"left"``, ``"right"`` or ``"keep"``; left is tried first."""
    lanes = set(lanes)
    others = [o for o in others if o.id != ego.id]
    old_lead, old_follow = _neighbors(ego.lane, ego.x, others)
    a_old = accel_behind(ego, old_lead, ip)
    # old follower before and after the ego leaves
    of_before = accel_behind(old_follow, ego, ip) if old_follow else 0.0
    of_after = accel_behind(old_follow, old_lead, ip) if old_follow else 0.0
    for direction, dl in (("left", -1), ("right", 1)):
        target = ego.lane + dl
        if target not in lanes:
            continue
        new_lead, new_follow = _neighbors(target, ego.x, others)
        moved = ego._replace(lane=target)
        if new_lead is not None and new_lead.x - ego.x - ip.length <= 0:
            continue
        if new_follow is not None and ego.x - new_follow.x - ip.length <= 0:
            continue
        nf_after = accel_behind(new_follow, moved, ip) if new_follow else 0.0
        if new_follow is not None and nf_after < -mp.b_safe:
            continue
        nf_before = accel_behind(new_follow, new_lead, ip) if new_follow else 0.0
        a_new = accel_behind(moved, new_lead, ip)
        gain = a_new - a_old + mp.politeness * ((nf_after - nf_before) + (of_after - of_before))
        if gain > mp.a_threshold:
            return direction
    return "keep"
