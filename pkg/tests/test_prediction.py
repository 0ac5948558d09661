import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmdp_mpc.maneuver import ACTIONS, ManeuverState, Policy, TransitionTable, state
from hmdp_mpc.prediction import (EmptyScenarioTree, NonPsdInput, SaContinuousState, SaParams, ellipse,
                                 enumerate_branches, mode_dynamics, propagate_covariance, propagate_mean,
                                 step_dynamics)
from hmdp_mpc.scenario import builtin_scenarios, load_scenario

TABLE = TransitionTable.default()


def brute_force(s0, policy, table, H, delta):
    """Every length-H action word, walked through the table, kept if its probability reaches delta."""
    out = {}
    for word in itertools.product(ACTIONS, repeat=H):
        s, p, states = s0, 1.0, []
        for a in word:
            nxt = table.successors[(s, a)]
            p *= policy(s, a)
            if nxt is None or p == 0.0:
                break
            states.append(nxt)
            s = nxt
        else:
            if p >= delta:
                out[word] = (tuple(states), p)
    return out


def shipped_policies():
    for name in builtin_scenarios():
        cfg = load_scenario(name)
        for sv in cfg.svs:
            for sw in sv.schedule:
                yield name, sv, sw.policy, cfg


@pytest.mark.parametrize("H", [1, 2, 3])
def test_enumeration_equals_brute_force_for_shipped_policies(H):
    n = 0
    for name, sv, pol, cfg in shipped_policies():
        for delta in (0.0, cfg.delta_seq, 0.01, 0.1, 0.5):
            s0 = ManeuverState(sv.lane, 0)
            want = brute_force(s0, pol, cfg.table, H, delta)
            try:
                rs = enumerate_branches(s0, SaContinuousState(sv.x0, sv.y0, sv.v0), np.zeros((3, 3)), pol,
                                        cfg.table, H, delta, cfg.sa_params(), sv.id)
                got = {b.actions: (b.states, b.probability) for b in rs.branches}
            except EmptyScenarioTree:
                got = {}
            assert set(got) == set(want), (name, sv.id, delta)
            for k in want:
                assert got[k][0] == want[k][0]
                assert got[k][1] == pytest.approx(want[k][1], rel=1e-12)
            n += 1
    assert n > 0


def test_low_probability_branch_pruned():
    # two lateral hypotheses; the 0.2 merge survives a 0.1 threshold but not 0.3
    pol = Policy.from_modes({0: 1.0}, {1: {0: 0.8, 1: 0.2}})
    x0 = SaContinuousState(100.0, 4.0, 15.0)
    rs = enumerate_branches(state("s1"), x0, np.zeros((3, 3)), pol, TABLE, 1, 0.1, SaParams())
    assert sorted(b.actions[0].symbol for b in rs.branches) == ["a1", "a7"]
    rs = enumerate_branches(state("s1"), x0, np.zeros((3, 3)), pol, TABLE, 1, 0.3, SaParams())
    assert [b.actions[0].symbol for b in rs.branches] == ["a1"]


def test_deterministic_policy_one_branch():
    pol = Policy.deterministic()
    rs = enumerate_branches(state("s4"), SaContinuousState(0, 0, 10), np.zeros((3, 3)), pol, TABLE, 3, 1.0,
                            SaParams())
    assert len(rs) == 1 and rs.branches[0].probability == 1.0


def test_empty_tree_and_bad_inputs():
    pol = Policy.from_modes({0: 0.5, 1: 0.5})
    x0 = SaContinuousState(0, 0, 10)
    with pytest.raises(EmptyScenarioTree):
        enumerate_branches(state("s4"), x0, np.zeros((3, 3)), pol, TABLE, 2, 0.9, SaParams())
    with pytest.raises(NonPsdInput):
        enumerate_branches(state("s4"), x0, -np.eye(3), pol, TABLE, 2, 0.1, SaParams())
    with pytest.raises(ValueError):
        enumerate_branches(state("s4"), x0, np.zeros((3, 3)), pol, TABLE, 0, 0.1, SaParams())


def test_lane_keep_mean_closed_form():
    p = SaParams(T_h=0.5, a_avg=2.0)
    x = SaContinuousState(10.0, 0.0, 20.0)
    nxt = propagate_mean(x, mode_dynamics(0, 1, p))
    assert nxt.x == pytest.approx(10 + 20 * 0.5 + 0.5 * 2 * 0.25)
    assert nxt.vx == pytest.approx(21.0)
    assert nxt.y == 0.0


def test_lane_change_settles_on_target():
    p = SaParams()
    x = SaContinuousState(0.0, 4.0, 15.0)
    for _ in range(40):
        d = step_dynamics(state("s1"), ACTIONS[6], state("s4"), x, p)
        x = propagate_mean(x, d)
    assert abs(x.y - 0.0) < 0.2


def _mc_covariance(seq, s0, x0, Q0, params, n, rng):
    """Sample rollouts with process noise; the affine modes do not depend on the sampled state here."""
    samples = rng.multivariate_normal(x0.vector(), Q0, size=n)
    s, xm = s0, x0
    for a in seq:
        nxt = TABLE.successors[(s, a)]
        d = step_dynamics(s, a, nxt, xm, params)
        noise = rng.multivariate_normal(np.zeros(3), d.Xi, size=n)
        samples = samples @ d.A.T + d.B @ d.F + noise
        xm = propagate_mean(xm, d)
        s = nxt
    return np.cov(samples.T)


@pytest.mark.parametrize("word", [("a1", "a1", "a1"), ("a7", "a1", "a1"), ("a2", "a3", "a1")])
def test_covariance_matches_monte_carlo(word):
    params = SaParams()
    Q0 = np.diag([0.2, 0.1, 0.05])
    x0 = SaContinuousState(50.0, 4.0, 15.0)
    seq = [ACTIONS[int(w[1:]) - 1] for w in word]
    pol = Policy.from_modes({0: 0.4, 1: 0.3, -1: 0.3}, {0: 0.5, 1: 0.5})
    rs = enumerate_branches(state("s1"), x0, Q0, pol, TABLE, 3, 0.0, params)
    br = next(b for b in rs.branches if b.actions == tuple(seq))
    emp = _mc_covariance(seq, state("s1"), x0, Q0, params, 100_000, np.random.default_rng(1))
    rel = np.linalg.norm(emp - br.covariances[-1]) / np.linalg.norm(br.covariances[-1])
    assert rel < 0.05


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=9, max_size=9), st.integers(-1, 1), st.sampled_from([-1, 0, 1]))
def test_covariance_stays_psd(entries, lon, lat):
    M = np.asarray(entries).reshape(3, 3)
    Q = M @ M.T
    d = mode_dynamics(lat, lon, SaParams(), y=0.0)
    out = propagate_covariance(Q, d)
    assert np.allclose(out, out.T)
    assert np.linalg.eigvalsh(out).min() > -1e-9


def test_ellipse_axes():
    e = ellipse(np.diag([4.0, 1.0, 0.0]))
    assert e["semi_major"] == pytest.approx(4.0)
    assert e["semi_minor"] == pytest.approx(2.0)
    assert math.isclose(abs(math.cos(e["angle"])), 1.0)
