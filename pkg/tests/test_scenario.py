import json

import numpy as np
import pytest

from hmdp_mpc.scenario import (ScenarioNotFound, ScenarioParseError, ScenarioValidationError, builtin_scenarios,
                               load_scenario, parse_scenario)

MINIMAL = {
    "T_sim": 8.0, "T_l": 0.2, "T_h": 0.8, "d_safe": 20.0, "cumulative_probability_threshold": 1e-3,
    "cost_table": [[6, 5, 6], [2, 0, 2], [11, 9, 11]],
    "ev": {"lane": 2, "x0": 0.0, "y0": 0.0, "v0": 20.0},
}


def test_case1_values():
    cfg = load_scenario("case1")
    assert (cfg.T_sim, cfg.T_l, cfg.T_h, cfg.H, cfg.d_safe, cfg.delta_seq) == (50, 0.2, 0.8, 3, 40, 1e-5)
    assert cfg.cost_table.c == ((6, 5, 6), (2, 0, 2), (11, 9, 11))
    assert cfg.ratio == 4


def test_case3_values():
    cfg = load_scenario("case3")
    assert (cfg.T_sim, cfg.T_l, cfg.T_h, cfg.d_safe, cfg.delta_seq) == (5, 0.02, 0.08, 6, 0.2)
    assert np.allclose(np.asarray(cfg.Xi)[:2, :2], np.diag([0.9, 0.9]))


def test_every_shipped_scenario_loads():
    names = builtin_scenarios()
    assert {"case1", "case2", "case3", "free_road"} <= set(names)
    for n in names:
        load_scenario(n)


def test_non_integer_ratio_rejected():
    with pytest.raises(ScenarioValidationError, match="integer"):
        parse_scenario(dict(MINIMAL, T_h=0.5, T_l=0.2))


def test_unknown_keys_rejected():
    with pytest.raises(ScenarioValidationError, match="unknown"):
        parse_scenario(dict(MINIMAL, horizon=3))
    with pytest.raises(ScenarioValidationError, match="unknown"):
        parse_scenario(dict(MINIMAL, ev=dict(MINIMAL["ev"], colour="red")))


@pytest.mark.parametrize("key", ["T_sim", "d_safe", "cost_table", "ev"])
def test_missing_required(key):
    data = {k: v for k, v in MINIMAL.items() if k != key}
    with pytest.raises(ScenarioValidationError, match=key):
        parse_scenario(data)


@pytest.mark.parametrize("override", [{"epsilon": 0.7}, {"H": 0}, {"cumulative_probability_threshold": 2.0},
                                      {"planner": "rl"}, {"Xi": [[1, 0, 0], [0, -1, 0], [0, 0, 1]]}])
def test_invalid_values(override):
    with pytest.raises(ScenarioValidationError):
        parse_scenario(dict(MINIMAL, **override))


def test_provenance_marks_filled_defaults():
    cfg = parse_scenario(MINIMAL)
    prov = cfg.to_dict()["provenance"]
    assert prov["T_sim"] == "file"
    assert prov["H"] == "default"
    assert prov["Xi"] == "default (assumed)"
    assert prov["lc_duration"] == "default (assumed)"


def test_parse_error_reports_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "T_sim": 5,\n  "T_l": oops\n}\n')
    with pytest.raises(ScenarioParseError, match=r"bad\.json:3"):
        load_scenario(p)
    with pytest.raises(ScenarioNotFound):
        load_scenario(tmp_path / "missing.json")


def test_policy_schedule(tmp_path):
    data = dict(MINIMAL, svs=[{"id": "A", "lane": 1, "x0": 50, "y0": 4, "v0": 20, "policy": [
        {"t": 0, "modes": {"long": {"0": 1.0}}},
        {"t": 3.2, "modes": {"long": {"1": 1.0}}}]}])
    cfg = parse_scenario(data)
    sv = cfg.svs[0]
    from hmdp_mpc.maneuver import state
    assert sv.policy_at(0.0).most_likely(state("s1")).symbol == "a1"
    assert sv.policy_at(3.2).most_likely(state("s1")).symbol == "a2"


def test_overrides_revalidate():
    cfg = parse_scenario(MINIMAL)
    assert cfg.with_overrides(epsilon=0.2).epsilon == 0.2
    with pytest.raises(ScenarioValidationError):
        cfg.with_overrides(T_l=0.3)


def test_roundtrip_through_json(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(MINIMAL))
    assert load_scenario(p).d_safe == 20.0
