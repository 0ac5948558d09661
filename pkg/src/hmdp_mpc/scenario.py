"""Scenario files: JSON in, validated ``ScenarioConfig`` out.

Values that the scenario does not set are filled from documented defaults
and listed under ``provenance`` when the configuration is echoed, so a run
record always shows which numbers came from the file and which were filled
in.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .baseline import IdmParams, MobilParams
from .maneuver import ManeuverState, Policy, TransitionTable
from .planner import CostTable, EvParams, PlannerConfig
from .plant import PlantParams
from .prediction import SaParams

PLANNERS = ("hmdp-mpc", "idm-mobil")
FALLBACKS = ("baseline", "least-violation")


class ScenarioError(Exception):
    pass


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    pass


class ScenarioNotFound(ScenarioError, FileNotFoundError):
    pass


@dataclass(frozen=True)
class PolicySwitch:
    t: float
    policy: Policy


@dataclass(frozen=True)
class VehicleInit:
    id: str
    lane: int
    x0: float
    y0: float
    v0: float
    schedule: tuple[PolicySwitch, ...] = ()
    v_bounds: tuple[float, float] = (0.0, math.inf)

    def policy_at(self, t: float) -> Policy:
        current = self.schedule[0].policy
        for sw in self.schedule:
            if sw.t <= t + 1e-9:
                current = sw.policy
        return current


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    T_sim: float
    T_l: float
    T_h: float
    H: int
    lane_width: float
    d_safe: float
    K1: float
    K2: float
    a_avg: float
    epsilon: float
    delta_seq: float
    cost_table: CostTable
    ev: VehicleInit
    svs: tuple[VehicleInit, ...]
    Xi: tuple
    Q0: tuple
    lc_duration: float
    rng_seed: int = 0
    planner: str = "hmdp-mpc"
    modal_truth: bool = False
    risk_split: bool = False
    sv_guard: bool = False
    fallback: str = "baseline"
    speed_weight: float = 0.0
    v_des: Optional[float] = None
    table: TransitionTable = field(default_factory=TransitionTable.default)
    ev_table: TransitionTable = field(default_factory=TransitionTable.default)
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    plant: PlantParams = field(default_factory=PlantParams)
    provenance: dict = field(default_factory=dict, compare=False)
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def ratio(self) -> int:
        return int(round(self.T_h / self.T_l))

    @property
    def n_decisions(self) -> int:
        return int(round(self.T_sim / self.T_h))

    def sa_params(self) -> SaParams:
        return SaParams(self.T_h, self.K1, self.K2, self.a_avg, self.lane_width, self.Xi)

    def ev_params(self) -> EvParams:
        return EvParams(self.T_h, self.a_avg, self.lane_width, self.lc_duration)

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(self.H, self.d_safe, self.epsilon, self.risk_split,
                             self.ev.v_bounds[0], self.ev.v_bounds[1], self.ev_params(), self.ev_table,
                             self.speed_weight, self.v_des)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        cfg = replace(self, **kw)
        _validate(cfg)
        return cfg

    def to_dict(self) -> dict:
        out = dict(self.raw)
        out.update({
            "name": self.name, "T_sim": self.T_sim, "T_l": self.T_l, "T_h": self.T_h, "H": self.H,
            "lane_width": self.lane_width, "d_safe": self.d_safe, "K1": self.K1, "K2": self.K2,
            "a_avg": self.a_avg, "epsilon": self.epsilon,
            "cumulative_probability_threshold": self.delta_seq,
            "cost_table": [list(r) for r in self.cost_table.c],
            "Xi": [list(r) for r in self.Xi], "Q0": [list(r) for r in self.Q0],
            "lc_duration": self.lc_duration, "rng_seed": self.rng_seed, "planner": self.planner,
            "modal_truth": self.modal_truth, "risk_split": self.risk_split, "sv_guard": self.sv_guard,
            "fallback": self.fallback,
            "speed_tracking": {"weight": self.speed_weight, "v_des": self.v_des},
        })
        out["provenance"] = dict(self.provenance)
        return out


# Values the reference case definitions leave open; flagged "assumed" in provenance.
ASSUMED_DEFAULTS: dict[str, Any] = {
    "epsilon": 0.05,
    "Xi": [[0.05, 0.0, 0.0], [0.0, 0.05, 0.0], [0.0, 0.0, 0.01]],
    "Q0": [[0.0] * 3] * 3,
    "lc_duration_steps": 4,
    "rng_seed": 0,
    "planner": "hmdp-mpc",
    "modal_truth": False,
    "risk_split": False,
    "sv_guard": False,
    "fallback": "baseline",
    "speed_tracking": {"weight": 0.0},
    "idm": {},
    "mobil": {},
    "plant": {},
}
REFERENCE_DEFAULTS: dict[str, Any] = {
    "H": 3, "lane_width": 4.0, "K1": 3.0, "K2": 1.0, "a_avg": 2.0,
}
REQUIRED = ("T_sim", "T_l", "T_h", "d_safe", "cumulative_probability_threshold", "cost_table", "ev")
KNOWN = set(REQUIRED) | set(ASSUMED_DEFAULTS) | set(REFERENCE_DEFAULTS) | {
    "name", "description", "svs", "lc_duration", "transition_table", "ev_transition_table",
}
VEHICLE_KEYS = {"id", "lane", "x0", "y0", "v0", "policy", "v_bounds"}


def _fail(msg: str):
    raise ScenarioValidationError(msg)


def _num(d: dict, key: str, ctx: str) -> float:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        _fail(f"{ctx}{key}: expected a finite number, got {v!r}")
    return float(v)


def _matrix(v, key) -> tuple:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3, 3):
        _fail(f"{key}: expected a 3x3 matrix")
    if np.max(np.abs(arr - arr.T)) > 1e-12 or np.linalg.eigvalsh(arr).min() < -1e-12:
        _fail(f"{key}: must be symmetric positive semidefinite")
    return tuple(tuple(float(x) for x in row) for row in arr)


def _table(v, base: Optional[Path], key: str) -> TransitionTable:
    try:
        if isinstance(v, str):
            p = Path(v)
            if base is not None and not p.is_absolute():
                p = base / p
            return TransitionTable.load(p)
        return TransitionTable.from_rows(v)
    except (OSError, ValueError, KeyError) as exc:
        _fail(f"{key}: {exc}")


def _policy(entry: dict, table: TransitionTable, base: Optional[Path], ctx: str) -> Policy:
    try:
        if "rows" in entry:
            return Policy.from_rows(entry["rows"], table)
        if "file" in entry:
            p = Path(entry["file"])
            if base is not None and not p.is_absolute():
                p = base / p
            with open(p) as fh:
                return Policy.from_rows(json.load(fh), table)
        if "modes" in entry:
            m = entry["modes"]
            return Policy.from_modes(m.get("long", {"0": 1.0}), m.get("lat"), table)
    except (OSError, ValueError, KeyError) as exc:
        _fail(f"{ctx}policy: {exc}")
    _fail(f"{ctx}policy: entry needs one of 'rows', 'file' or 'modes'")


def _vehicle(d: dict, ctx: str, table: TransitionTable, base: Optional[Path], default_id: str) -> VehicleInit:
    if not isinstance(d, dict):
        _fail(f"{ctx}: expected an object")
    unknown = set(d) - VEHICLE_KEYS
    if unknown:
        _fail(f"{ctx}: unknown keys {sorted(unknown)}")
    for k in ("lane", "x0", "y0", "v0"):
        if k not in d:
            _fail(f"{ctx}: missing '{k}'")
    lane = d["lane"]
    if lane not in (1, 2, 3):
        _fail(f"{ctx}.lane: must be 1, 2 or 3")
    schedule = []
    default = [] if ctx == "ev" else [{"t": 0.0, "modes": {"long": {"0": 1.0}}}]
    for i, entry in enumerate(d.get("policy", default)):
        t = float(entry.get("t", 0.0))
        schedule.append(PolicySwitch(t, _policy(entry, table, base, f"{ctx}.policy[{i}].")))
    schedule.sort(key=lambda s: s.t)
    vb = tuple(float(x) if x is not None else math.inf for x in d.get("v_bounds", [0.0, None]))
    if len(vb) != 2 or vb[0] > vb[1] or vb[0] < 0:
        _fail(f"{ctx}.v_bounds: expected [min, max] with 0 <= min <= max")
    if not vb[0] <= d["v0"] <= vb[1]:
        _fail(f"{ctx}: initial speed outside v_bounds")
    return VehicleInit(str(d.get("id", default_id)), int(lane), _num(d, "x0", ctx + "."),
                       _num(d, "y0", ctx + "."), _num(d, "v0", ctx + "."), tuple(schedule), vb)


def parse_scenario(data: dict, base: Optional[Path] = None, name: str = "scenario") -> ScenarioConfig:
    if not isinstance(data, dict):
        _fail("scenario must be a JSON object")
    unknown = set(data) - KNOWN
    if unknown:
        _fail(f"unknown keys {sorted(unknown)}")
    for k in REQUIRED:
        if k not in data:
            _fail(f"missing required key '{k}'")
    prov = {}
    d = dict(data)
    for k, v in {**REFERENCE_DEFAULTS, **ASSUMED_DEFAULTS}.items():
        if k in d:
            prov[k] = "file"
        else:
            d[k] = v
            prov[k] = "default" if k in REFERENCE_DEFAULTS else "default (assumed)"
    for k in REQUIRED:
        prov[k] = "file"

    T_h = _num(d, "T_h", "")
    if "lc_duration" in d:
        lc = _num(d, "lc_duration", "")
        prov["lc_duration"] = "file"
    else:
        lc = d["lc_duration_steps"] * T_h
        prov["lc_duration"] = prov.pop("lc_duration_steps")
    prov.pop("lc_duration_steps", None)

    table = _table(d["transition_table"], base, "transition_table") if "transition_table" in d \
        else TransitionTable.default()
    ev_table = _table(d["ev_transition_table"], base, "ev_transition_table") \
        if "ev_transition_table" in d else table
    try:
        ct = CostTable(tuple(tuple(r) for r in d["cost_table"]))
    except (ValueError, TypeError) as exc:
        _fail(f"cost_table: {exc}")
    ev = _vehicle(d["ev"], "ev", ev_table, base, "EV")
    svs = tuple(_vehicle(sv, f"svs[{i}]", table, base, f"SV{i + 1}") for i, sv in enumerate(d.get("svs", [])))
    try:
        idm = IdmParams(**{"v0": ev.v0, **d["idm"]})
        mobil = MobilParams(**d["mobil"])
        plant = PlantParams(**d["plant"])
    except (TypeError, ValueError) as exc:
        _fail(f"controller parameters: {exc}")
    st = d["speed_tracking"]
    if not isinstance(st, dict) or set(st) - {"weight", "v_des"}:
        _fail("speed_tracking: expected an object with 'weight' and optional 'v_des'")
    st = {"weight": 0.0, "v_des": ev.v0, **st}
    w, v_des = _num(st, "weight", "speed_tracking."), _num(st, "v_des", "speed_tracking.")
    if w < 0:
        _fail("speed_tracking.weight: must be nonnegative")
    H = d["H"]
    if not isinstance(H, int) or isinstance(H, bool):
        _fail("H: must be an integer")
    planner = d["planner"]
    cfg = ScenarioConfig(
        name=str(d.get("name", name)), T_sim=_num(d, "T_sim", ""), T_l=_num(d, "T_l", ""), T_h=T_h,
        H=H, lane_width=_num(d, "lane_width", ""), d_safe=_num(d, "d_safe", ""),
        K1=_num(d, "K1", ""), K2=_num(d, "K2", ""), a_avg=_num(d, "a_avg", ""),
        epsilon=_num(d, "epsilon", ""), delta_seq=_num(d, "cumulative_probability_threshold", ""),
        cost_table=ct, ev=ev, svs=svs, Xi=_matrix(d["Xi"], "Xi"), Q0=_matrix(d["Q0"], "Q0"),
        lc_duration=lc, rng_seed=int(d["rng_seed"]), planner=str(planner),
        modal_truth=bool(d["modal_truth"]), risk_split=bool(d["risk_split"]), sv_guard=bool(d["sv_guard"]),
        fallback=str(d["fallback"]), speed_weight=w, v_des=v_des if w > 0 else None,
        table=table, ev_table=ev_table, idm=idm, mobil=mobil, plant=plant, provenance=prov,
        raw={k: v for k, v in data.items() if k in ("description",)},
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    for k in ("T_sim", "T_l", "T_h", "lane_width", "a_avg", "lc_duration"):
        if getattr(cfg, k) <= 0:
            _fail(f"{k}: must be positive")
    if cfg.d_safe < 0:
        _fail("d_safe: must be nonnegative")
    r = cfg.T_h / cfg.T_l
    if abs(r - round(r)) > 1e-9 or round(r) < 1:
        _fail(f"T_h / T_l must be a positive integer, got {r:g}")
    n = cfg.lc_duration / cfg.T_h
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        _fail(f"lc_duration must be a positive multiple of T_h, got {n:g} steps")
    if cfg.H < 1:
        _fail("H: must be at least 1")
    if not 0.0 < cfg.epsilon <= 0.5:
        _fail("epsilon: must lie in (0, 0.5]")
    if not 0.0 <= cfg.delta_seq <= 1.0:
        _fail("cumulative_probability_threshold: must lie in [0, 1]")
    if cfg.fallback not in FALLBACKS:
        _fail(f"fallback: must be one of {FALLBACKS}")
    if cfg.planner not in PLANNERS:
        _fail(f"planner: must be one of {PLANNERS}")
    ids = [cfg.ev.id] + [s.id for s in cfg.svs]
    if len(set(ids)) != len(ids):
        _fail("vehicle ids must be unique")


SCENARIO_DIR = "data/scenarios"


def builtin_scenarios() -> list[str]:
    root = resources.files("hmdp_mpc").joinpath(SCENARIO_DIR)
    # auxiliary files (transition tables, policies) sit next to the scenarios
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".json") and "ev" in json.loads(p.read_text()))


def resolve_path(path: Union[str, Path]) -> Path:
    """A filesystem path if it exists, otherwise a shipped scenario of that name."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.name.endswith(".json") else p.name + ".json"
    candidate = resources.files("hmdp_mpc").joinpath(SCENARIO_DIR).joinpath(name)
    if candidate.is_file():
        return Path(str(candidate))
    raise ScenarioNotFound(f"scenario not found: {path}")


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    p = resolve_path(path)
    text = p.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_scenario(data, p.parent, p.stem)
