"""Command-line front end.

Exit codes: 0 success, 2 configuration error (nothing written), 3 simulation
error.  Messages go to stderr, summaries to stdout.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .maneuver import ManeuverState
from .prediction import EmptyScenarioTree, SaContinuousState, enumerate_branches
from .scenario import PLANNERS, ScenarioError, load_scenario
from .simulation import SimulationError, metrics, run, sweep_epsilon

EXIT_OK, EXIT_CONFIG, EXIT_SIM = 0, 2, 3
DEFAULT_EPS = (0.01, 0.05, 0.1, 0.2, 0.3)

log = logging.getLogger("hmdp_mpc")


class ConfigError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmdp-mpc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, planner=True):
        sp.add_argument("--scenario", required=True, help="scenario JSON path or shipped name (case1, ...)")
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (defaults to the scenario's)")
        sp.add_argument("--modal-truth", action="store_true", help="surrounding vehicles take their modal action")
        if planner:
            sp.add_argument("--planner", choices=PLANNERS, default=None)

    r = sub.add_parser("run", help="simulate one scenario")
    common(r)
    r.add_argument("--out", default=None, help="directory for log.ndjson, traj.csv and metrics.json")

    c = sub.add_parser("compare", help="run both planners on the same scenario and seed")
    common(c, planner=False)
    c.add_argument("--baseline-seed", type=int, default=None,
                   help="must equal --seed if given; differing seeds are rejected")
    c.add_argument("--out", default=None)

    s = sub.add_parser("sweep", help="risk-tolerance sweep of the first lane change")
    common(s, planner=False)
    s.add_argument("--epsilon-list", default=",".join(map(str, DEFAULT_EPS)),
                   help="comma separated values in (0, 0.5)")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--out", default=None, help="file to write instead of stdout")

    pr = sub.add_parser("predict", help="reachability set of one surrounding vehicle")
    pr.add_argument("--scenario", required=True)
    pr.add_argument("--agent", required=True)
    pr.add_argument("--horizon", type=int, default=None)
    pr.add_argument("--delta", type=float, default=None, help="override the cumulative probability threshold")
    pr.add_argument("--time", type=float, default=0.0, help="time used to pick the policy from the schedule")
    pr.add_argument("--format", choices=("json", "csv"), default="json")
    pr.add_argument("--out", default=None)

    v = sub.add_parser("validate", help="load and echo a scenario with provenance")
    v.add_argument("--scenario", required=True)
    return p


def _load(name):
    try:
        return load_scenario(name)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from exc


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _summary(label: str, m) -> str:
    dist = ", ".join(f"{k} {v:.1f} m" for k, v in m.distance.items())
    gap = "n/a" if m.min_gap is None else f"{m.min_gap:.2f} m"
    return (f"[{label}] distance: {dist}\n"
            f"[{label}] min gap {gap}, violations {m.violations}, fallbacks {m.fallbacks}, "
            f"lanes {m.lane_sequence}\n")


def cmd_run(a) -> int:
    cfg = _load(a.scenario)
    tlog = run(cfg, seed=a.seed, planner=a.planner, modal_truth=a.modal_truth or None)
    m = metrics(tlog)
    if a.out:
        tlog.write(a.out)
        (Path(a.out) / "metrics.json").write_text(json.dumps(m.to_dict(), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(_summary(tlog.meta["planner"], m))
    return EXIT_OK


def cmd_compare(a) -> int:
    if a.baseline_seed is not None and a.baseline_seed != a.seed:
        raise ConfigError("compare needs the same seed for both planners")
    cfg = _load(a.scenario)
    seed = cfg.rng_seed if a.seed is None else a.seed
    logs = {p: run(cfg, seed=seed, planner=p, modal_truth=a.modal_truth or None) for p in PLANNERS}
    reports = {p: metrics(lg) for p, lg in logs.items()}
    ids = list(reports[PLANNERS[0]].distance)
    lines = [f"{'metric':<22}" + "".join(f"{p:>14}" for p in PLANNERS)]
    for vid in ids:
        lines.append(f"{'distance ' + vid:<22}" + "".join(f"{reports[p].distance[vid]:>14.1f}" for p in PLANNERS))
    for key in ("min_gap", "violations", "fallbacks", "t_lc"):
        vals = [getattr(reports[p], key) for p in PLANNERS]
        lines.append(f"{key:<22}" + "".join(f"{'n/a' if v is None else round(v, 2):>14}" for v in vals))
    sys.stdout.write("\n".join(lines) + "\n")
    if a.out:
        out = Path(a.out)
        for p, lg in logs.items():
            lg.write(out / p)
        (out / "metrics.json").write_text(
            json.dumps({p: r.to_dict() for p, r in reports.items()}, indent=2, sort_keys=True) + "\n")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("planner", "t", "id", "v"))
        for p, lg in logs.items():
            for r in lg.ticks:
                for v in r["vehicles"]:
                    w.writerow((p, repr(r["t"]), v["id"], repr(v["v"])))
        (out / "velocity.csv").write_text(buf.getvalue())
    return EXIT_OK


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--epsilon-list: {exc}") from exc
    if not vals or any(not 0.0 < e < 0.5 for e in vals):
        raise ConfigError("--epsilon-list: values must lie in (0, 0.5)")
    return vals


def cmd_sweep(a) -> int:
    eps = _eps_list(a.epsilon_list)
    cfg = _load(a.scenario)
    rows = sweep_epsilon(cfg, eps, seed=a.seed, modal_truth=a.modal_truth or None)
    if a.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ("epsilon", "t_lc", "x_lc", "violations"), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    _emit(text, a.out)
    return EXIT_OK


def cmd_predict(a) -> int:
    cfg = _load(a.scenario)
    sv = next((s for s in cfg.svs if s.id == a.agent), None)
    if sv is None:
        raise ConfigError(f"unknown agent {a.agent!r}; known: {[s.id for s in cfg.svs]}")
    H = cfg.H if a.horizon is None else a.horizon
    delta = cfg.delta_seq if a.delta is None else a.delta
    if H < 1 or not 0.0 <= delta <= 1.0:
        raise ConfigError("--horizon must be >= 1 and --delta in [0, 1]")
    try:
        rs = enumerate_branches(ManeuverState(sv.lane, 0), SaContinuousState(sv.x0, sv.y0, sv.v0),
                                np.asarray(cfg.Q0), sv.policy_at(a.time), cfg.table, H, delta,
                                cfg.sa_params(), sv.id)
    except EmptyScenarioTree as exc:
        raise SimulationError(str(exc)) from exc
    if a.format == "json":
        text = json.dumps(rs.to_dict(), indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("branch", "step", "action", "state", "probability", "x", "y", "vx",
                    "var_x", "var_y", "cov_xy", "semi_major", "semi_minor", "angle"))
        for i, b in enumerate(rs.to_dict()["branches"]):
            for j in range(H):
                m, c, e = b["means"][j], b["covariances"][j], b["ellipses_2sigma"][j]
                w.writerow((i, j + 1, b["actions"][j], b["states"][j], repr(b["probability"]),
                            *map(repr, m), repr(c[0][0]), repr(c[1][1]), repr(c[0][1]),
                            repr(e["semi_major"]), repr(e["semi_minor"]), repr(e["angle"])))
        text = buf.getvalue()
    _emit(text, a.out)
    return EXIT_OK


def cmd_validate(a) -> int:
    cfg = _load(a.scenario)
    sys.stdout.write(json.dumps(cfg.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep, "predict": cmd_predict,
            "validate": cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
