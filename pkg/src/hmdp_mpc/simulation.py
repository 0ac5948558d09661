"""Closed-loop simulation on two timescales, trajectory logs and metrics.

Every ``T_h`` the surrounding vehicles' branches are re-enumerated from their
realized states, the ego decision is recomputed and its first action
committed. Every ``T_l`` the ego bicycle tracks the committed references and
the surrounding vehicles move along their ground-truth step.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .baseline import FREE_GAP, IdmParams, Vehicle, idm_accel, mobil_decide
from .maneuver import ACTIONS, ManeuverAction, ManeuverState, Policy, TransitionTable
from .planner import (EvState, MpcSolution, NoFeasibleSequence, baseline_policy, ev_predict,
                      evaluate_sequence, shifted_candidate, solve,
                      solve_least_violation)
from .plant import BicycleState, TrackingReference, bicycle_step, sv_step_truth, track
from .prediction import (EmptyScenarioTree, ReachabilitySet, SaContinuousState, enumerate_branches,
                         propagate_mean, step_dynamics)
from .scenario import ScenarioConfig

TRACKING_SLACK = 0.5  # m; tolerated tracking error when checking realized gaps
CSV_COLUMNS = ("t", "id", "x", "y", "v", "lane", "action")


class SimulationError(RuntimeError):
    pass


# --------------------------------------------------------------------------- log


@dataclass
class TrajectoryLog:
    """Ordered run records.

    ``ticks`` hold every vehicle's continuous state at each low-level tick,
    ``decisions`` one entry per high-level step and ``events`` discrete
    occurrences (lane-change start and end, fallbacks, minimum gaps).
    """

    meta: dict = field(default_factory=dict)
    ticks: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def records(self) -> Iterable[dict]:
        yield {"type": "meta", **self.meta}
        merged = [(r["t"], 0, i, "tick", r) for i, r in enumerate(self.ticks)]
        merged += [(r["t"], 1, i, "decision", r) for i, r in enumerate(self.decisions)]
        merged += [(r["t"], 2, i, "event", r) for i, r in enumerate(self.events)]
        for _, _, _, kind, r in sorted(merged, key=lambda m: m[:3]):
            yield {"type": kind, **r}

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    @classmethod
    def from_ndjson(cls, text: str) -> "TrajectoryLog":
        log = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            r = json.loads(line)
            kind = r.pop("type")
            if kind == "meta":
                log.meta = r
            else:
                getattr(log, kind + "s").append(r)
        return log

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.ticks:
            for v in r["vehicles"]:
                w.writerow([repr(r["t"]), v["id"], repr(v["x"]), repr(v["y"]), repr(v["v"]), v["lane"],
                            v["action"]])
        return buf.getvalue()

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "log.ndjson").write_text(self.to_ndjson())
        (out / "traj.csv").write_text(self.to_csv())
        return {"log": str(out / "log.ndjson"), "traj": str(out / "traj.csv")}


def read_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({"t": float(r["t"]), "id": r["id"], "x": float(r["x"]), "y": float(r["y"]),
                     "v": float(r["v"]), "lane": int(r["lane"]), "action": r["action"]})
    return rows


# ----------------------------------------------------------------------- helpers


def physical_lane(y: float, lane_width: float, lanes: int = 3) -> int:
    return int(min(lanes, max(1, round(2 - y / lane_width))))


def _profile_derivs(params, tau: float) -> tuple[float, float, float]:
    c1, c2, c3 = params.quintic
    p = c1 * tau ** 3 + c2 * tau ** 4 + c3 * tau ** 5
    dp = 3 * c1 * tau ** 2 + 4 * c2 * tau ** 3 + 5 * c3 * tau ** 4
    ddp = 6 * c1 * tau + 12 * c2 * tau ** 2 + 20 * c3 * tau ** 3
    return p, dp, ddp


def lateral_reference(s0: EvState, a: ManeuverAction, t: float, params) -> tuple[float, float, float]:
    """Position, velocity and acceleration of the lateral reference ``t`` after a decision."""
    direction = a.lat if a.lat != 0 else s0.lc_dir
    if direction == 0:
        return s0.y, 0.0, 0.0
    rate = 1.0 / params.lc_duration
    tau = min(1.0, s0.lc_progress + t * rate)
    p0 = params.profile(s0.lc_progress)
    p, dp, ddp = _profile_derivs(params, tau)
    if s0.lc_progress + t * rate >= 1.0:
        dp = ddp = 0.0
    W = params.lane_width
    return s0.y - direction * W * (p - p0), -direction * W * dp * rate, -direction * W * ddp * rate ** 2


def _sample_action(policy: Policy, s: ManeuverState, rng: np.random.Generator, modal: bool) -> ManeuverAction:
    u = rng.random()  # drawn in both modes so the stream does not depend on the flag
    if modal:
        return policy.most_likely(s)
    cum = np.cumsum(policy.row(s))
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    idx = min(idx, len(ACTIONS) - 1)
    while policy.row(s)[idx] <= 0.0:
        idx -= 1
    return ACTIONS[idx]


def modal_branch(cfg: ScenarioConfig, sv_id: str, s: ManeuverState, x: SaContinuousState,
                 policy: Policy) -> ReachabilitySet:
    """Single most probable branch, used when the threshold prunes everything."""
    rs = enumerate_branches(s, x, np.asarray(cfg.Q0), policy, cfg.table, cfg.H, 0.0, cfg.sa_params(), sv_id)
    best = max(rs.branches, key=lambda b: b.probability)
    return ReachabilitySet(sv_id, (best,), cfg.H)


def predict_all(cfg: ScenarioConfig, sv_states, t: float) -> tuple[list[ReachabilitySet], list[str]]:
    reach, notes = [], []
    params = cfg.sa_params()
    for sv, (s, x) in zip(cfg.svs, sv_states):
        pol = sv.policy_at(t)
        try:
            rs = enumerate_branches(s, x, np.asarray(cfg.Q0), pol, cfg.table, cfg.H, cfg.delta_seq, params, sv.id)
        except EmptyScenarioTree:
            rs = modal_branch(cfg, sv.id, s, x, pol)
            notes.append(sv.id)
        reach.append(rs)
    return reach, notes


@dataclass
class _Sv:
    id: str
    s: ManeuverState
    x: SaContinuousState
    action: ManeuverAction = ACTIONS[0]
    start: Optional[SaContinuousState] = None
    end: Optional[SaContinuousState] = None


def _sv_truth_step(cfg: ScenarioConfig, sv_cfg, sv: _Sv, a: ManeuverAction, rng, others, modal: bool):
    params = cfg.sa_params()
    nxt = cfg.table.next(sv.s, a)
    d = step_dynamics(sv.s, a, nxt, sv.x, params, T=cfg.T_h)
    new = sv_step_truth(sv.x, d, rng, T=cfg.T_h)
    T = cfg.T_h
    # optional reactive braking behind a slower vehicle in the target lane
    if cfg.sv_guard:
        lead = None
        for o_id, o_lane, o_x, o_v in others:
            if o_id != sv.id and o_lane == nxt.lane and o_x > sv.x.x and (lead is None or o_x < lead[2]):
                lead = (o_id, o_lane, o_x, o_v)
        if lead is not None:
            guard = cfg.idm
            a_mode = d.F[0]
            a_idm = idm_accel(sv.x.vx, lead[2] - sv.x.x - guard.length, sv.x.vx - lead[3],
                              replace(guard, v0=max(sv.x.vx, 1.0) * 10.0))
            if a_idm < a_mode:
                dv = (a_idm - a_mode) * T
                new = replace(new, x=new.x + 0.5 * dv * T, vx=new.vx + dv)
    lo, hi = sv_cfg.v_bounds
    if not lo <= new.vx <= hi:
        clipped = min(hi, max(lo, new.vx))
        new = replace(new, x=new.x - 0.5 * (new.vx - clipped) * T, vx=clipped)
    return nxt, new


def _sv_interp(start: SaContinuousState, end: SaContinuousState, frac: float, T: float) -> tuple[float, float, float]:
    """Within-interval position: constant acceleration matching both endpoints in x and v."""
    t = frac * T
    acc = (end.vx - start.vx) / T
    x_lin = start.x + start.vx * t + 0.5 * acc * t * t
    # residual (noise) spread linearly so the interval ends exactly on the sample
    resid = end.x - (start.x + start.vx * T + 0.5 * acc * T * T)
    x = x_lin + frac * resid
    y = start.y + frac * (end.y - start.y)
    v = start.vx + acc * t
    return x, y, v


def _f(v: float) -> float:
    return float(v)


# ------------------------------------------------------------------------- run


def run(cfg: ScenarioConfig, seed: Optional[int] = None, planner: Optional[str] = None,
        modal_truth: Optional[bool] = None) -> TrajectoryLog:
    """Simulate ``cfg`` and return the full trajectory log.

    ``seed``, ``planner`` and ``modal_truth`` override the scenario values.
    """
    seed = cfg.rng_seed if seed is None else int(seed)
    planner = planner or cfg.planner
    modal = cfg.modal_truth if modal_truth is None else bool(modal_truth)
    if planner not in ("hmdp-mpc", "idm-mobil"):
        raise SimulationError(f"unknown planner {planner!r}")
    rng = np.random.default_rng(seed)
    ev_params = cfg.ev_params()
    pcfg = cfg.planner_config()
    W = cfg.lane_width
    ratio = cfg.ratio
    n_dec = cfg.n_decisions

    log = TrajectoryLog(meta={"scenario": cfg.name, "seed": seed, "planner": planner, "modal_truth": modal,
                              "T_l": cfg.T_l, "T_h": cfg.T_h, "d_safe": cfg.d_safe, "epsilon": cfg.epsilon,
                              "ev_id": cfg.ev.id, "sv_ids": [s.id for s in cfg.svs],
                              "x0": {cfg.ev.id: cfg.ev.x0, **{s.id: s.x0 for s in cfg.svs}}})
    bike = BicycleState(cfg.ev.x0, cfg.ev.y0, 0.0, cfg.ev.v0)
    ev = EvState(cfg.ev.x0, cfg.ev.y0, cfg.ev.v0, ManeuverState(cfg.ev.lane, 0))
    svs = [_Sv(s.id, ManeuverState(s.lane, 0), SaContinuousState(s.x0, s.y0, s.v0)) for s in cfg.svs]
    prev: Optional[MpcSolution] = None
    ev_action = ACTIONS[0]

    def snapshot(t, ev_target):
        vs = [{"id": cfg.ev.id, "x": _f(bike.x), "y": _f(bike.y), "v": _f(bike.v), "psi": _f(bike.psi),
               "lane": physical_lane(bike.y, W), "target_lane": ev_target, "action": ev_action.symbol}]
        for sv in svs:
            x, y, v = sv.x.x, sv.x.y, sv.x.vx
            vs.append({"id": sv.id, "x": _f(x), "y": _f(y), "v": _f(v), "psi": 0.0,
                       "lane": physical_lane(y, W), "target_lane": sv.s.lane, "action": sv.action.symbol})
        log.ticks.append({"t": round(t, 10), "vehicles": vs})

    snapshot(0.0, cfg.ev.lane)
    for k in range(n_dec):
        t = k * cfg.T_h
        # planning state: realized longitudinal state, nominal lateral state
        s0 = replace(ev, x=bike.x, vx=bike.v)
        decision = {"t": round(t, 10), "k": k, "ev_state": s0.discrete.symbol, "lc_progress": s0.lc_progress}
        sv_states = [(sv.s, sv.x) for sv in svs]
        if planner == "hmdp-mpc":
            reach, pruned_all = predict_all(cfg, sv_states, t)
            for sid in pruned_all:
                log.events.append({"t": round(t, 10), "kind": "modal_branch_fallback", "id": sid})
            decision["branch_count"] = sum(len(r.branches) for r in reach)
            if prev is not None:
                cand = shifted_candidate(prev)
                res = evaluate_sequence(s0, cand, reach, cfg.cost_table, pcfg)
                decision["shift_feasible"] = bool(res is not None and res[0])
                decision["shift_cost"] = None if res is None else float(res[1])
            try:
                sol = solve(s0, reach, cfg.cost_table, pcfg)
                ev_action = sol.first_action
                decision.update({
                    "action": ev_action.symbol, "plan": [a.symbol for a in sol.actions], "cost": sol.cost,
                    "feasible_count": sol.feasible_count, "candidate_count": sol.candidate_count,
                    "fallback": False,
                    "margins": [[m.sa_id, m.branch_id, m.step, m.lhs, m.required] for m in sol.margins],
                    "plan_x1": float(sol.predicted[0].x), "plan_lane1": sol.predicted[0].discrete.lane,
                })
                prev = sol
            except NoFeasibleSequence as exc:
                prev = None
                if cfg.fallback == "least-violation":
                    rec = solve_least_violation(s0, reach, cfg.cost_table, pcfg)
                    ev_action = rec.first_action
                    plan = [a.symbol for a in rec.actions]
                else:
                    ev_action = baseline_policy(s0.discrete)
                    plan = [ev_action.symbol]
                decision.update({"action": ev_action.symbol, "plan": plan, "cost": None,
                                 "feasible_count": 0, "fallback": True, "margins": []})
                log.events.append({"t": round(t, 10), "kind": "fallback", "mode": cfg.fallback,
                                   "reason": str(exc)})
            ev_next = ev_predict(s0, ev_action, ev_params, cfg.ev_table)
            a_long = ev_next.discrete.long * cfg.a_avg
        else:
            lat = 0
            if not s0.changing_lane:
                me = Vehicle(cfg.ev.id, s0.discrete.lane, bike.x, bike.v)
                others = [Vehicle(sv.id, sv.s.lane, sv.x.x, sv.x.vx) for sv in svs]
                allowed = {s0.discrete.lane}
                for lat in (-1, 1):
                    nxt = cfg.ev_table.successors[(s0.discrete, ManeuverAction(lat, 0))]
                    if nxt is not None:
                        allowed.add(nxt.lane)
                choice = mobil_decide(me, others, cfg.idm, cfg.mobil, sorted(allowed))
                lat = {"left": -1, "keep": 0, "right": 1}[choice]
            ev_action = ManeuverAction(lat, 0)
            s0 = replace(s0, discrete=ManeuverState(s0.discrete.lane, 0))
            ev_next = ev_predict(s0, ev_action, ev_params, cfg.ev_table)
            a_long = None
            decision.update({"action": ev_action.symbol, "fallback": False})
        if ev_action.lat != 0:
            log.events.append({"t": round(t, 10), "kind": "lc_start", "x": _f(bike.x),
                               "from": s0.discrete.lane, "to": ev_next.discrete.lane})
        if s0.changing_lane and not ev_next.changing_lane:
            log.events.append({"t": round(t + cfg.T_h, 10), "kind": "lc_end", "lane": ev_next.discrete.lane})

        # surrounding vehicles: maneuver and ground-truth endpoint for this interval
        others = [(cfg.ev.id, physical_lane(bike.y, W), bike.x, bike.v)] + \
                 [(sv.id, physical_lane(sv.x.y, W), sv.x.x, sv.x.vx) for sv in svs]
        for sv_cfg, sv in zip(cfg.svs, svs):
            sv.action = _sample_action(sv_cfg.policy_at(t), sv.s, rng, modal)
            nxt, new = _sv_truth_step(cfg, sv_cfg, sv, sv.action, rng, others, modal)
            sv.start, sv.end = sv.x, new
            sv.s = nxt
        decision["sv_actions"] = {sv.id: sv.action.symbol for sv in svs}
        if planner == "hmdp-mpc" and decision.get("margins"):
            decision["enforced_violations"] = _enforced_violations(decision, svs, cfg, prev)
        log.decisions.append(decision)

        # low-level ticks
        v_start = bike.v
        for i in range(1, ratio + 1):
            tau_t = (i - 1) * cfg.T_l
            y_ref, vy_ref, ay_ref = lateral_reference(s0, ev_action, tau_t + cfg.T_l, ev_params)
            if a_long is None:
                lead = None
                my_lane = ev_next.discrete.lane
                for sv in svs:
                    if physical_lane(sv.x.y, W) == my_lane and sv.x.x > bike.x and (lead is None or sv.x.x < lead.x.x):
                        lead = sv
                if lead is None:
                    acc = idm_accel(bike.v, FREE_GAP, 0.0, cfg.idm)
                else:
                    acc = idm_accel(bike.v, lead.x.x - bike.x - cfg.idm.length, bike.v - lead.x.vx, cfg.idm)
                ref = TrackingReference(y_ref, bike.v, vy_ref, ay_ref, acc)
            else:
                v_ref = v_start + a_long * (tau_t + cfg.T_l)
                ref = TrackingReference(y_ref, v_ref, vy_ref, ay_ref, a_long)
            cmd = track(bike, ref, cfg.plant)
            bike = bicycle_step(bike, cmd, cfg.T_l, cfg.plant.wheelbase)
            frac = i / ratio
            for sv in svs:
                if i == ratio:
                    sv.x = sv.end
                else:
                    x, y, v = _sv_interp(sv.start, sv.end, frac, cfg.T_h)
                    sv.x = SaContinuousState(x, y, v, sv.start.vy)
            snapshot(t + i * cfg.T_l, ev_next.discrete.lane)
        ev = ev_next
    return log


def _enforced_violations(decision: dict, svs: Sequence[_Sv], cfg: ScenarioConfig, sol: MpcSolution) -> int:
    """Step-one constraints of the chosen plan violated by the realized surrounding state.

    A constraint counts when its branch starts with the action the vehicle
    actually took; the ego side uses the planned position so that only the
    surrounding-vehicle uncertainty is tested.
    """
    if sol is None:
        return 0
    by_id = {sv.id: sv for sv in svs}
    count = 0
    x_ego = sol.predicted[0].x
    for m in sol.margins:
        if m.step != 1:
            continue
        sv = by_id[m.sa_id]
        if sv.s.lane != sol.predicted[0].discrete.lane:
            continue
        mu_planned = m.lhs + cfg.d_safe  # sign * (ego - sv mean)
        sign = 1.0 if mu_planned >= 0 else -1.0
        if sign * (x_ego - sv.end.x) - cfg.d_safe < 0:
            count += 1
    return count


def run_baseline(cfg: ScenarioConfig, seed: Optional[int] = None, modal_truth: Optional[bool] = None) -> TrajectoryLog:
    return run(cfg, seed=seed, planner="idm-mobil", modal_truth=modal_truth)


# --------------------------------------------------------------------- metrics


@dataclass
class MetricsReport:
    distance: dict
    min_gap: Optional[float]
    violations: int
    t_lc: Optional[float]
    x_lc: Optional[float]
    mean_speed: dict
    fallbacks: int
    lane_sequence: list
    enforced_violation_runs: int = 0
    shift_infeasible: int = 0
    cost_increases: int = 0
    physical_min_gap: Optional[float] = None
    physical_violations: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(log: TrajectoryLog) -> MetricsReport:
    """Recompute every summary quantity from the log alone."""
    ev_id = log.meta["ev_id"]
    d_safe = log.meta["d_safe"]
    first, last = log.ticks[0]["vehicles"], log.ticks[-1]["vehicles"]
    x_first = {v["id"]: v["x"] for v in first}
    distance = {v["id"]: v["x"] - x_first[v["id"]] for v in last}
    speeds: dict = {}
    min_gap, violations, phys_gap, phys_violations = None, 0, None, 0
    for r in log.ticks:
        ego = next(v for v in r["vehicles"] if v["id"] == ev_id)
        for v in r["vehicles"]:
            speeds.setdefault(v["id"], []).append(v["v"])
            if v["id"] == ev_id:
                continue
            gap = abs(v["x"] - ego["x"])
            if v["target_lane"] == ego["target_lane"]:
                min_gap = gap if min_gap is None else min(min_gap, gap)
                violations += gap < d_safe - TRACKING_SLACK
            if v["lane"] == ego["lane"]:
                phys_gap = gap if phys_gap is None else min(phys_gap, gap)
                phys_violations += gap < d_safe - TRACKING_SLACK
    t_lc = x_lc = None
    for e in log.events:
        if e["kind"] == "lc_start":
            t_lc, x_lc = e["t"], e["x"]
            break
    lane_seq = _lane_sequence(log)
    fallbacks = sum(1 for d in log.decisions if d.get("fallback"))
    enforced = int(any(d.get("enforced_violations", 0) > 0 for d in log.decisions))
    shift_bad = sum(1 for d in log.decisions if d.get("shift_feasible") is False)
    increases = 0
    prev_cost = None
    for d in log.decisions:
        c = d.get("cost")
        if c is not None and prev_cost is not None and c > prev_cost + 1e-9:
            increases += 1
        prev_cost = c
    return MetricsReport(distance, min_gap, violations, t_lc, x_lc,
                         {k: float(np.mean(v)) for k, v in speeds.items()}, fallbacks, lane_seq,
                         enforced, shift_bad, increases, phys_gap, phys_violations)


def _lane_sequence(log: TrajectoryLog) -> list:
    """Target-lane sequence of the ego vehicle, consecutive duplicates removed."""
    seq = []
    for e in log.events:
        if e["kind"] == "lc_start":
            if not seq:
                seq.append(e["from"])
            seq.append(e["to"])
    if not seq and log.ticks:
        ego = next(v for v in log.ticks[0]["vehicles"] if v["id"] == log.meta["ev_id"])
        seq.append(ego["lane"])
    return seq


# ----------------------------------------------------------------------- sweeps


def _threads(n: int) -> int:
    cap = os.environ.get("HMDP_MPC_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, limit))


def sweep_epsilon(cfg: ScenarioConfig, eps_list: Sequence[float], seed: Optional[int] = None,
                  modal_truth: Optional[bool] = None) -> list[dict]:
    eps_list = list(eps_list)
    if not eps_list:
        raise ValueError("eps_list must not be empty")
    for e in eps_list:
        if not 0.0 < e < 0.5:
            raise ValueError(f"risk tolerance {e} outside (0, 0.5)")

    def one(e):
        m = metrics(run(cfg.with_overrides(epsilon=float(e)), seed=seed, planner="hmdp-mpc",
                        modal_truth=modal_truth))
        return {"epsilon": float(e), "t_lc": m.t_lc, "x_lc": m.x_lc, "violations": m.violations}

    with ThreadPoolExecutor(_threads(len(eps_list))) as pool:
        return list(pool.map(one, eps_list))


def batch(cfg: ScenarioConfig, seeds: Sequence[int], planner: Optional[str] = None,
          modal_truth: Optional[bool] = None) -> list[MetricsReport]:
    """Independent runs over ``seeds``, in seed order."""
    with ThreadPoolExecutor(_threads(len(seeds))) as pool:
        return list(pool.map(lambda s: metrics(run(cfg, seed=s, planner=planner, modal_truth=modal_truth)),
                             seeds))


# ------------------------------------------------------------ frozen environment


@dataclass(frozen=True)
class FrozenStep:
    k: int
    state: EvState
    solution: Optional[MpcSolution]
    shift_feasible: Optional[bool]
    shift_cost: Optional[float]


def frozen_environment(cfg: ScenarioConfig, steps: int, ev0: Optional[EvState] = None) -> list[FrozenStep]:
    """Receding-horizon loop with exact ego prediction and modal, noise-free surroundings.

    The ego vehicle lands exactly on its planned state and every surrounding
    vehicle takes its most likely action along the mean, so a plan made at
    one step is still valid at the next.
    """
    pcfg = cfg.planner_config()
    params = cfg.sa_params()
    ev = ev0 or EvState(cfg.ev.x0, cfg.ev.y0, cfg.ev.v0, ManeuverState(cfg.ev.lane, 0))
    svs = [(ManeuverState(s.lane, 0), SaContinuousState(s.x0, s.y0, s.v0)) for s in cfg.svs]
    out, prev = [], None
    for k in range(steps):
        t = k * cfg.T_h
        reach, _ = predict_all(cfg, svs, t)
        shift_ok = shift_cost = None
        if prev is not None:
            res = evaluate_sequence(ev, shifted_candidate(prev), reach, cfg.cost_table, pcfg)
            shift_ok = bool(res is not None and res[0])
            shift_cost = None if res is None else float(res[1])
        try:
            sol = solve(ev, reach, cfg.cost_table, pcfg)
        except NoFeasibleSequence:
            sol = None
        out.append(FrozenStep(k, ev, sol, shift_ok, shift_cost))
        if sol is None:
            break
        ev = sol.predicted[0]
        prev = sol
        nxt = []
        for sv_cfg, (s, x) in zip(cfg.svs, svs):
            a = sv_cfg.policy_at(t).most_likely(s)
            s1 = cfg.table.next(s, a)
            nxt.append((s1, propagate_mean(x, step_dynamics(s, a, s1, x, params))))
        svs = nxt
    return out
