"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line; ``conftest.py`` prints them at the end
of the run.  Every tolerance is pinned below.
"""
import itertools
import math
import time

import numpy as np
import pytest

from regression_scenarios import regression_cases

from hmdp_mpc.chance import gap_constraint, quantile, reformulate
from hmdp_mpc.maneuver import ACTIONS, STATES, ManeuverState, Policy, TransitionTable, action, state
from hmdp_mpc.prediction import EmptyScenarioTree, SaContinuousState, SaParams, enumerate_branches, step_dynamics
from hmdp_mpc.scenario import builtin_scenarios, load_scenario
from hmdp_mpc.simulation import TRACKING_SLACK, batch, frozen_environment, metrics, run, sweep_epsilon

# --- pinned tolerances -------------------------------------------------------
C1_SEEDS = tuple(range(10))
C1_TARGETS = {("hmdp-mpc", "EV"): 1400.0, ("hmdp-mpc", "SV1"): 1300.0,
              ("idm-mobil", "EV"): 1250.0, ("idm-mobil", "SV1"): 1150.0}
C1_REL_TOL = 0.10
C1_RUNTIME_S = 30.0
C2_SEED = 0
C3_SEED = 0
C3_EPSILONS = (0.01, 0.05, 0.1, 0.2, 0.3)
C4_SAMPLES = 100_000
C4_ABS_TOL = 0.01
C4_EPSILONS = (0.01, 0.05, 0.1, 0.2)
C5_SAMPLES = 100_000
C5_REL_FRO = 0.05
C6_DELTAS = (0.0, 1e-5, 1e-3, 0.01, 0.05, 0.2)
C7_STEPS = 20
C10_SEED = 11

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


# 1 ---------------------------------------------------------------------------
def test_c01_case2_efficiency():
    cfg = load_scenario("case2")
    t0 = time.perf_counter()
    reports = {p: batch(cfg, C1_SEEDS, planner=p) for p in ("hmdp-mpc", "idm-mobil")}
    elapsed = time.perf_counter() - t0
    means = {(p, v): float(np.mean([r.distance[v] for r in reports[p]])) for p, v in C1_TARGETS}
    within = {k: abs(means[k] - C1_TARGETS[k]) <= C1_REL_TOL * C1_TARGETS[k] for k in C1_TARGETS}
    per_seed = [(a.distance["EV"] > b.distance["EV"]) and (a.distance["SV1"] > b.distance["SV1"])
                for a, b in zip(reports["hmdp-mpc"], reports["idm-mobil"])]
    ok = all(within.values()) and all(per_seed) and elapsed < C1_RUNTIME_S
    detail = ", ".join(f"{p}/{v} {means[(p, v)]:.0f} m (target {C1_TARGETS[(p, v)]:.0f}"
                       f"{'' if within[(p, v)] else ' OUT'})" for p, v in C1_TARGETS)
    record(1, ok, f"{detail}; proposed>baseline on {sum(per_seed)}/{len(per_seed)} seeds; {elapsed:.1f} s")
    assert all(within.values()), means
    assert all(per_seed), per_seed
    assert elapsed < C1_RUNTIME_S


# 2 ---------------------------------------------------------------------------
def test_c02_case1_milestones():
    cfg = load_scenario("case1")
    m = metrics(run(cfg, seed=C2_SEED))
    seq = m.lane_sequence
    reached3 = [i for i, lane in enumerate(seq) if lane == 3]
    milestone = bool(reached3) and any(lane == 1 for lane in seq[reached3[0] + 1:])
    ok = milestone and m.violations == 0
    record(2, ok, f"lane sequence {seq}; violations below d_safe - {TRACKING_SLACK} m: {m.violations}")
    assert m.violations == 0
    assert milestone, seq


# 3 ---------------------------------------------------------------------------
def test_c03_case3_risk_monotonicity():
    rows = sweep_epsilon(load_scenario("case3"), C3_EPSILONS, seed=C3_SEED)
    t = [r["t_lc"] for r in rows]
    x = [r["x_lc"] for r in rows]
    defined = all(v is not None for v in t + x)
    weak = defined and all(b >= a for a, b in zip(t, t[1:])) and all(b >= a - 1e-9 for a, b in zip(x, x[1:]))
    strict = defined and (t[-1] > t[0]) and (x[-1] > x[0])
    record(3, weak and strict, f"t_LC {t}; x_LC {[None if v is None else round(v, 2) for v in x]}")
    assert weak and strict


# 4 ---------------------------------------------------------------------------
def test_c04_chance_calibration():
    rng = np.random.default_rng(2024)
    Q = np.array([[1.5, 0.2, 0.3], [0.2, 0.4, 0.0], [0.3, 0.0, 0.2]])
    mean = np.array([80.0, 0.0, 18.0])
    d_safe = 12.0
    rates = {}
    for eps in C4_EPSILONS:
        ac = gap_constraint(1.0, d_safe, eps)
        x_ea = np.array([mean[0] + d_safe + quantile(eps) * math.sqrt(Q[0, 0]), 0.0, 0.0])
        assert abs(reformulate(ac, x_ea, mean, Q).slack) < 1e-9
        s = rng.multivariate_normal(mean, Q, size=C4_SAMPLES)
        rates[eps] = float(np.mean(ac.c_ea @ x_ea + s @ ac.c_sa + ac.c < 0))
    ok = all(abs(r - e) <= C4_ABS_TOL for e, r in rates.items())
    record(4, ok, "empirical violation rate " + ", ".join(f"eps {e}: {r:.4f}" for e, r in rates.items()))
    assert ok


# 5 ---------------------------------------------------------------------------
def test_c05_covariance_oracle():
    params = SaParams()
    Q0 = np.diag([0.3, 0.1, 0.05])
    x0 = SaContinuousState(40.0, 4.0, 16.0)
    pol = Policy.from_modes({0: 0.6, 1: 0.2, -1: 0.2}, {0: 0.6, 1: 0.4})
    rs = enumerate_branches(state("s1"), x0, Q0, pol, TransitionTable.default(), 3, 0.0, params)
    rng = np.random.default_rng(5)
    worst = 0.0
    for br in rs.branches[:: max(1, len(rs.branches) // 6)]:
        samples = rng.multivariate_normal(x0.vector(), Q0, size=C5_SAMPLES)
        s, xm = state("s1"), x0
        for a, nxt, m in zip(br.actions, br.states, br.means):
            d = step_dynamics(s, a, nxt, xm, params)
            samples = samples @ d.A.T + d.B @ d.F + rng.multivariate_normal(np.zeros(3), d.Xi, size=C5_SAMPLES)
            s, xm = nxt, m
        emp = np.cov(samples.T)
        worst = max(worst, np.linalg.norm(emp - br.covariances[-1]) / np.linalg.norm(br.covariances[-1]))
    record(5, worst <= C5_REL_FRO, f"worst relative Frobenius error {worst:.4f} (H=3)")
    assert worst <= C5_REL_FRO


# 6 ---------------------------------------------------------------------------
def _brute(s0, pol, table, H, delta):
    out = {}
    for word in itertools.product(ACTIONS, repeat=H):
        s, p, ok = s0, 1.0, True
        for a in word:
            nxt = table.successors[(s, a)]
            p *= pol(s, a)
            if nxt is None or p == 0.0:
                ok = False
                break
            s = nxt
        if ok and p >= delta:
            out[word] = p
    return out


def test_c06_branch_enumeration_oracle():
    checked = mismatches = 0
    for name in builtin_scenarios():
        cfg = load_scenario(name)
        for sv in cfg.svs:
            for sw in sv.schedule:
                for H, delta, lane in itertools.product((1, 2, 3), C6_DELTAS, (1, 2, 3)):
                    s0 = ManeuverState(lane, 0)
                    want = _brute(s0, sw.policy, cfg.table, H, delta)
                    try:
                        rs = enumerate_branches(s0, SaContinuousState(0, (2 - lane) * 4.0, 20), np.zeros((3, 3)),
                                                sw.policy, cfg.table, H, delta, cfg.sa_params())
                        got = {b.actions: b.probability for b in rs.branches}
                    except EmptyScenarioTree:
                        got = {}
                    checked += 1
                    if set(got) != set(want) or any(abs(got[k] - want[k]) > 1e-12 for k in want):
                        mismatches += 1
    record(6, mismatches == 0 and checked > 0, f"{checked} (policy, H, delta, lane) cases, {mismatches} mismatches")
    assert checked > 0 and mismatches == 0


# 7 and 8 ---------------------------------------------------------------------
@pytest.fixture(scope="module")
def frozen_runs():
    return {name: frozen_environment(cfg, C7_STEPS, ev0) for name, cfg, ev0 in regression_cases()}


def test_c07_recursive_feasibility(frozen_runs):
    bad = 0
    for steps in frozen_runs.values():
        for prev, cur in zip(steps, steps[1:]):
            bad += prev.solution is not None and cur.shift_feasible is not True
        bad += any(s.solution is None for s in steps)
    record(7, bad == 0, f"{len(frozen_runs)} scenarios x {C7_STEPS} steps, {bad} infeasible shifted candidates")
    assert bad == 0


def test_c08_cost_descent(frozen_runs):
    increases, unfinished, trace = 0, [], {}
    for name, steps in frozen_runs.items():
        V = [s.solution.cost for s in steps]
        trace[name] = V[:4]
        increases += sum(b > a + 1e-9 for a, b in zip(V, V[1:]))
        if V[-1] != 0.0:
            unfinished.append(name)
    ok = increases == 0 and not unfinished
    record(8, ok, f"{increases} increases of V*, not at goal: {unfinished or 'none'}; first values {trace}")
    assert ok


# 9 ---------------------------------------------------------------------------
REFERENCE_TABLE = """
s1 s2 s3 / / / s4 s5 s6
s2 / s1 / / / s5 / s4
s3 s1 / / / / s6 s4 /
s4 s5 s6 s1 s2 s3 s7 s8 s9
s5 / s4 s2 / s1 s8 / s7
s6 s4 / s3 s1 / s9 s7 /
s7 s8 s9 s4 s5 s6 / / /
s8 / s7 s5 / s4 / / /
s9 s7 / s6 s4 / / / /
"""


def test_c09_transition_table():
    table = TransitionTable.default()
    rows = [r.split() for r in REFERENCE_TABLE.strip().splitlines()]
    wrong = 0
    for i, j in itertools.product(range(9), range(9)):
        want = None if rows[i][j] == "/" else state(rows[i][j])
        wrong += table.successors[(STATES[i], action(j + 1))] != want
    record(9, wrong == 0, f"81 cells, {wrong} mismatches")
    assert wrong == 0


# 10 --------------------------------------------------------------------------
def test_c10_determinism():
    same = True
    for name in ("case1", "case3"):
        cfg = load_scenario(name)
        a, b = run(cfg, seed=C10_SEED).to_ndjson(), run(cfg, seed=C10_SEED).to_ndjson()
        same &= a.encode() == b.encode()
        a, b = run(cfg, seed=C10_SEED, planner="idm-mobil").to_csv(), run(cfg, seed=C10_SEED,
                                                                           planner="idm-mobil").to_csv()
        same &= a == b
    record(10, same, "repeated runs give byte-identical logs (case1, case3, both planners)")
    assert same
