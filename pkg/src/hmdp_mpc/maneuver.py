"""Discrete maneuver layer shared by the ego vehicle and surrounding vehicles.

States encode an intended lane and a longitudinal phase, actions encode a
lateral move and a longitudinal mode change.  The transition table is data
(``data/transition_table.json``) so that alternative road topologies can be
loaded from a file with the same schema.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Union


class InfeasibleTransition(ValueError):
    """Raised when an action is not admissible in the current state."""


class PolicyError(ValueError):
    """Raised for malformed or inadmissible policies."""


class ManeuverAction(NamedTuple):
    lat: int  # -1 left, 0 keep, +1 right
    long: int  # -1 decelerate, 0 cruise, +1 accelerate

    @property
    def index(self) -> int:
        return ACTIONS.index(self) + 1

    @property
    def symbol(self) -> str:
        return f"a{self.index}"


class ManeuverState(NamedTuple):
    lane: int  # 1..3, left to right
    long: int  # -1 deceleration, 0 cruise, +1 acceleration phase

    @property
    def index(self) -> int:
        return STATES.index(self) + 1

    @property
    def symbol(self) -> str:
        return f"s{self.index}"


ACTIONS: tuple[ManeuverAction, ...] = tuple(
    ManeuverAction(lat, lon)
    for lat in (0, -1, 1)
    for lon in (0, 1, -1)
)
STATES: tuple[ManeuverState, ...] = tuple(
    ManeuverState(lane, lon)
    for lane in (1, 2, 3)
    for lon in (0, 1, -1)
)

KEEP_CRUISE = ACTIONS[0]


def action(symbol_or_index: Union[str, int]) -> ManeuverAction:
    """Look up an action by ``"a3"`` or ``3``."""
    idx = int(str(symbol_or_index).lstrip("a"))
    return ACTIONS[idx - 1]


def state(symbol_or_index: Union[str, int]) -> ManeuverState:
    """Look up a state by ``"s4"`` or ``4``."""
    idx = int(str(symbol_or_index).lstrip("s"))
    return STATES[idx - 1]


@dataclass(frozen=True)
class TransitionTable:
    """Deterministic successor map ``(state, action) -> state`` or ``None``."""

    successors: Mapping[tuple[ManeuverState, ManeuverAction], Optional[ManeuverState]]

    def __post_init__(self):
        missing = [(s, a) for s in STATES for a in ACTIONS if (s, a) not in self.successors]
        if missing:
            raise ValueError(f"transition table incomplete: {len(missing)} cells missing")

    def __hash__(self):
        return hash(tuple(self.successors[(s, a)] for s in STATES for a in ACTIONS))

    def __eq__(self, other):
        if not isinstance(other, TransitionTable):
            return NotImplemented
        return all(self.successors[k] == other.successors[k] for k in self.successors)

    @classmethod
    def from_rows(cls, rows: Mapping[str, Iterable[Optional[str]]]) -> "TransitionTable":
        """Build from the JSON schema: ``{"s1": ["s1", "s2", null, ...], ...}``.

        Infeasible cells may be written as ``null`` or ``"/"``.
        """
        succ = {}
        for s in STATES:
            if s.symbol not in rows:
                raise ValueError(f"transition table missing row {s.symbol}")
            row = list(rows[s.symbol])
            if len(row) != 9:
                raise ValueError(f"row {s.symbol} must have 9 entries, got {len(row)}")
            for a, cell in zip(ACTIONS, row):
                succ[(s, a)] = None if cell in (None, "/") else state(cell)
        return cls(succ)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TransitionTable":
        with open(path) as fh:
            return cls.from_rows(json.load(fh))

    @classmethod
    def default(cls) -> "TransitionTable":
        return _default_table()

    def to_rows(self) -> dict[str, list[Optional[str]]]:
        return {
            s.symbol: [None if (n := self.successors[(s, a)]) is None else n.symbol for a in ACTIONS]
            for s in STATES
        }

    def admissible(self, s: ManeuverState) -> tuple[ManeuverAction, ...]:
        return tuple(a for a in ACTIONS if self.successors[(s, a)] is not None)

    def next(self, s: ManeuverState, a: ManeuverAction) -> ManeuverState:
        nxt = self.successors[(s, a)]
        if nxt is None:
            raise InfeasibleTransition(f"{a.symbol}{tuple(a)} is infeasible in {s.symbol}{tuple(s)}")
        return nxt


_DEFAULT: Optional[TransitionTable] = None


def _default_table() -> TransitionTable:
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("hmdp_mpc.data").joinpath("transition_table.json").read_text()
        _DEFAULT = TransitionTable.from_rows(json.loads(text))
    return _DEFAULT


def admissible_actions(s: ManeuverState, table: TransitionTable) -> set[ManeuverAction]:
    return set(table.admissible(s))


def transition(s: ManeuverState, a: ManeuverAction, table: TransitionTable) -> ManeuverState:
    return table.next(s, a)


@dataclass(frozen=True)
class Policy:
    """State-conditioned distribution over the nine maneuver actions."""

    probs: Mapping[ManeuverState, tuple[float, ...]]
    table: TransitionTable = field(default_factory=TransitionTable.default, compare=False)

    def __post_init__(self):
        for s in STATES:
            row = self.probs.get(s)
            if row is None:
                raise PolicyError(f"policy has no row for {s.symbol}")
            if len(row) != 9:
                raise PolicyError(f"policy row {s.symbol} must have 9 entries")
            if any(p < 0 for p in row):
                raise PolicyError(f"negative probability in row {s.symbol}")
            if abs(sum(row) - 1.0) > 1e-9:
                raise PolicyError(f"policy row {s.symbol} sums to {sum(row)!r}")
            for a, p in zip(ACTIONS, row):
                if p > 0 and self.table.successors[(s, a)] is None:
                    raise PolicyError(f"{a.symbol} has probability {p} but is infeasible in {s.symbol}")

    def __call__(self, s: ManeuverState, a: ManeuverAction) -> float:
        return self.probs[s][a.index - 1]

    def row(self, s: ManeuverState) -> tuple[float, ...]:
        return tuple(self.probs[s])

    def most_likely(self, s: ManeuverState) -> ManeuverAction:
        row = self.probs[s]
        return ACTIONS[max(range(9), key=lambda i: (row[i], -i))]

    @classmethod
    def from_rows(cls, rows: Mapping[str, Iterable[float]], table: Optional[TransitionTable] = None) -> "Policy":
        table = table or TransitionTable.default()
        return cls({s: tuple(float(p) for p in rows[s.symbol]) for s in STATES if s.symbol in rows}, table)

    def to_rows(self) -> dict[str, list[float]]:
        return {s.symbol: list(self.probs[s]) for s in STATES}

    @classmethod
    def from_modes(
        cls,
        long_probs: Mapping[int, float],
        lat_probs: Union[Mapping[int, float], Mapping[int, Mapping[int, float]], None] = None,
        table: Optional[TransitionTable] = None,
    ) -> "Policy":
        """Build a policy from target-mode probabilities.

        ``long_probs`` maps a target longitudinal phase (-1/0/+1) to its
        probability.  ``lat_probs`` maps a lateral move to its probability,
        either once for all lanes or per lane (``{lane: {lat: p}}``).  Mass on
        a phase that is two steps away is moved to the adjacent phase, and
        mass on a lane change that leaves the road is moved to lane keeping.
        """
        table = table or TransitionTable.default()
        long_probs = {int(k): float(v) for k, v in long_probs.items()}
        lat_probs = lat_probs or {0: 1.0}
        if _is_per_lane(lat_probs):
            per_lane = {int(lane): {int(k): float(v) for k, v in row.items()} for lane, row in lat_probs.items()}
        else:
            shared = {int(k): float(v) for k, v in lat_probs.items()}
            per_lane = {lane: shared for lane in (1, 2, 3)}
        probs = {}
        for s in STATES:
            lat_row = per_lane.get(s.lane, {0: 1.0})
            row = [0.0] * 9
            for lat, q in lat_row.items():
                for target, p in long_probs.items():
                    if p * q == 0:
                        continue
                    lon = max(-1, min(1, int(target) - s.long))
                    a = ManeuverAction(int(lat), lon)
                    if table.successors[(s, a)] is None:
                        a = ManeuverAction(0, lon)
                    if table.successors[(s, a)] is None:
                        a = KEEP_CRUISE
                    row[a.index - 1] += p * q
            total = sum(row)
            probs[s] = tuple(p / total for p in row)
        return cls(probs, table)

    @classmethod
    def deterministic(cls, choice: Mapping[ManeuverState, ManeuverAction] = None,
                      table: Optional[TransitionTable] = None) -> "Policy":
        """Put all mass on one action per state (keep-cruise where unspecified)."""
        table = table or TransitionTable.default()
        choice = choice or {}
        probs = {}
        for s in STATES:
            row = [0.0] * 9
            row[choice.get(s, KEEP_CRUISE).index - 1] = 1.0
            probs[s] = tuple(row)
        return cls(probs, table)


def _is_per_lane(lat_probs) -> bool:
    return any(isinstance(v, Mapping) for v in lat_probs.values())


def filter_actions(s: ManeuverState, policy: Policy, delta: float) -> set[ManeuverAction]:
    """Actions whose probability reaches ``delta`` (ties retained)."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    row = policy.row(s)
    if delta == 0.0:
        return {a for a, p in zip(ACTIONS, row) if p > 0}
    return {a for a, p in zip(ACTIONS, row) if p >= delta}
