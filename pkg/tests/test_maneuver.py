import itertools

import pytest
from hypothesis import given, strategies as st

from hmdp_mpc.maneuver import (ACTIONS, STATES, InfeasibleTransition, ManeuverAction, ManeuverState, Policy,
                               PolicyError, TransitionTable, action, filter_actions, state, transition)

# Independent transcription of the reference 9x9 successor map ("/" = infeasible).
EXPECTED = """
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


def expected_cells():
    rows = [line.split() for line in EXPECTED.strip().splitlines()]
    return {(f"s{i + 1}", f"a{j + 1}"): cell for i, row in enumerate(rows) for j, cell in enumerate(row)}


def test_action_and_state_encoding():
    assert [tuple(a) for a in ACTIONS] == [(0, 0), (0, 1), (0, -1), (-1, 0), (-1, 1), (-1, -1),
                                          (1, 0), (1, 1), (1, -1)]
    assert [tuple(s) for s in STATES] == [(1, 0), (1, 1), (1, -1), (2, 0), (2, 1), (2, -1),
                                         (3, 0), (3, 1), (3, -1)]
    assert action("a5") == ManeuverAction(-1, 1) and action(5).symbol == "a5"
    assert state("s9") == ManeuverState(3, -1)


@pytest.mark.parametrize("cell", sorted(expected_cells().items()), ids=lambda c: f"{c[0][0]}-{c[0][1]}")
def test_transition_table_cell(cell):
    (s, a), want = cell
    table = TransitionTable.default()
    got = table.successors[(state(s), action(a))]
    if want == "/":
        assert got is None
        with pytest.raises(InfeasibleTransition):
            transition(state(s), action(a), table)
    else:
        assert got == state(want)


def test_transition_rule_brute_force():
    # the table is the rule "lane += lat within 1..3, phase += long within -1..1"
    table = TransitionTable.default()
    for s, a in itertools.product(STATES, ACTIONS):
        lane, lon = s.lane + a.lat, s.long + a.long
        want = ManeuverState(lane, lon) if 1 <= lane <= 3 and -1 <= lon <= 1 else None
        assert table.successors[(s, a)] == want


def test_table_roundtrip_and_incomplete():
    table = TransitionTable.default()
    assert TransitionTable.from_rows(table.to_rows()) == table
    rows = table.to_rows()
    del rows["s5"]
    with pytest.raises(ValueError):
        TransitionTable.from_rows(rows)


def test_policy_rejects_bad_rows():
    table = TransitionTable.default()
    good = Policy.from_modes({0: 1.0}).to_rows()
    bad = dict(good, s1=[0.5, 0.5, 0, 0, 0, 0, 0, 0, 0.1])
    with pytest.raises(PolicyError):
        Policy.from_rows(bad, table)
    infeasible = dict(good, s1=[0, 0, 0, 1.0, 0, 0, 0, 0, 0])  # left change from lane 1
    with pytest.raises(PolicyError):
        Policy.from_rows(infeasible, table)


def test_from_modes_target_phase():
    pol = Policy.from_modes({1: 0.9, 0: 0.05, -1: 0.05})
    # from deceleration, a target of +1 is two phases away and maps to one step up
    row = pol.row(state("s6"))
    assert row[action("a2").index - 1] == pytest.approx(0.95)
    assert row[action("a1").index - 1] == pytest.approx(0.05)
    assert pol.most_likely(state("s4")) == action("a2")


def test_from_modes_per_lane_lateral():
    pol = Policy.from_modes({0: 1.0}, {"1": {"0": 0.8, "1": 0.2}, "2": {"0": 1.0}})
    assert pol(state("s1"), action("a7")) == pytest.approx(0.2)
    assert pol(state("s4"), action("a1")) == pytest.approx(1.0)


def test_filter_ties_retained_and_zero_delta():
    pol = Policy.from_modes({0: 0.5, 1: 0.25, -1: 0.25})
    s = state("s4")
    assert filter_actions(s, pol, 0.25) == {action("a1"), action("a2"), action("a3")}
    assert filter_actions(s, pol, 0.3) == {action("a1")}
    assert filter_actions(s, pol, 0.0) == {action("a1"), action("a2"), action("a3")}
    with pytest.raises(ValueError):
        filter_actions(s, pol, 1.5)


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3),
       st.floats(0.0, 1.0))
def test_filter_matches_brute_force(w, delta):
    total = sum(w)
    pol = Policy.from_modes({0: w[0] / total, 1: w[1] / total, -1: w[2] / total})
    for s in STATES:
        row = pol.row(s)
        brute = {a for a, p in zip(ACTIONS, row) if (p >= delta if delta > 0 else p > 0)}
        assert filter_actions(s, pol, delta) == brute
