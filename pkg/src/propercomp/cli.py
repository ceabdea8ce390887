"""Command line harness: ``propercomp {analyze,bounds,design,market} SCENARIO``.

Exit status is 0 when every check passes, 1 when a bound, propriety or
participation check fails, and 2 when the input is invalid.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .compensation import (
    c1_rule,
    check_proper_compensation,
    check_strong_participation,
    check_weak_participation,
    expected_compensation,
    rule_from_cost,
)
from .design import (
    InfeasibleDesign,
    UnsupportedDimension,
    compensation_stats,
    construct_cost,
    required_profile,
    scenario_family,
    verify_design,
)
from .market import order_by_bias, run_market
from .scenario import ScenarioError, ScenarioFile, load_scenario
from .scoring import local_robustness_check, robustness_factor
from .simplex import SimplexGrid, decision_regions
from .uncertainty import (
    deviation_bound_check,
    global_loss_bound,
    incentive_bound_check,
    local_loss_bound_check,
    sweep_best_responses,
    uniform_estimate,
)

OUT_ENV = "PROPERCOMP_OUT"
DEFAULT_OUT = "propercomp_out"
LOCAL_CHECK_RESOLUTION = 2000


class CheckFailed(Exception):
    pass


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def dump_json(obj, path: Path):
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: Sequence[str], rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])


def _check(name: str, passed: bool, observed=None, bound=None, witness=None, **extra) -> dict[str, Any]:
    rec = {"name": name, "passed": bool(passed), "observed": observed, "bound": bound,
           "witness": witness}
    rec.update(extra)
    return rec


def _from_verdict(name: str, v) -> dict[str, Any]:
    if hasattr(v, "worst_gap"):
        return _check(name, v.proper, v.worst_gap, 0.0, v.witness, strict=v.strict,
                      min_strict_gap=v.min_strict_gap)
    return _check(name, v.passed, v.min_margin, 0.0, v.witness, max_expected=v.max_expected,
                  mean_expected=v.mean_expected, advisory=v.advisory)


def _report(cmd: str, sc: ScenarioFile, checks: list[dict[str, Any]], opts: dict[str, Any],
            **sections) -> dict[str, Any]:
    for c in checks:
        if not c["passed"] and c.get("witness") is None:
            c["witness"] = {"note": "no single witness point"}
    rep = {
        "experiment": f"{cmd}:{sc.name}",
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
        "provenance": {"scenario": sc.name, "sha256": sc.digest, "input": sc.raw,
                       "options": opts, "version": __version__},
    }
    rep.update(sections)
    return rep


def _grid(sc: ScenarioFile, override: int | None, sweep: bool = False) -> SimplexGrid:
    k = override or (sc.sweep_resolution if sweep else sc.resolution)
    return SimplexGrid(sc.m, k)


# commands ---------------------------------------------------------------------

def cmd_analyze(sc: ScenarioFile, args) -> tuple[dict[str, Any], dict[str, Any]]:
    b = sc.require_bias()
    tol = args.tol if args.tol is not None else sc.tolerances["proper"]
    grid = _grid(sc, args.grid)
    P = grid.points
    regions = decision_regions(sc.dm, grid, sc.policy)
    C = rule_from_cost(sc.cost, sc.rule_estimate(), sc.policy)
    c1 = c1_rule(b, sc.policy)
    checks = [
        _from_verdict("proper[net score]", check_proper_compensation(C, b, grid, tol=tol)),
        _from_verdict("weak_participation", check_weak_participation(C, b, grid, tol)),
        _from_verdict("strong_participation", check_strong_participation(C, b, grid, tol)),
        _from_verdict("proper[C1]", check_proper_compensation(c1, b, grid, tol=tol)),
        _from_verdict("strong_participation[C1]", check_strong_participation(c1, b, grid, tol)),
    ]
    c1_vals = c1.matrix(P)
    G = sc.cost.value(P)
    bstar = (P @ b.values.T).max(axis=1)
    decisions = sc.policy.decide_many(P)
    bpi = np.einsum("ij,ij->i", b.values[decisions], P)
    cpp = expected_compensation(C, P)
    c1pp = np.einsum("ij,ij->i", c1_vals, P)
    notes = {
        "c1_identically_zero": bool(np.all(c1_vals == 0.0)),
        "regions": {sc.dm.labels[i]: int(np.sum(regions.assignment == i)) for i in range(sc.dm.n)},
        "boundaries": {f"{sc.dm.labels[i]}|{sc.dm.labels[j]}": int(len(v))
                       for (i, j), v in sorted(regions.boundaries.items())},
        "grid_resolution": grid.resolution,
        "cost": sc.cost.spec,
    }
    header = [f"p{i}" for i in range(sc.m)] + ["decision", "G", "B_star", "B_pi", "C_pp", "C1_pp"]
    rows = [[*map(float, P[k]), sc.dm.labels[decisions[k]], float(G[k]), float(bstar[k]),
             float(bpi[k]), float(cpp[k]), float(c1pp[k])] for k in range(len(P))]
    return _report("analyze", sc, checks, _opts(args), notes=notes), {"csv": (header, rows)}


def cmd_bounds(sc: ScenarioFile, args):
    scen = sc.uncertainty_scenario()
    tol = args.tol if args.tol is not None else sc.tolerances["bound"]
    grid = _grid(sc, args.grid, sweep=True)
    sw = sweep_best_responses(scen, grid.points, grid)
    reports = [incentive_bound_check(scen, grid, grid, tol, sweep=sw)]
    m_meas = robustness_factor(scen.cost, None, grid)
    forms = []
    if m_meas > 0:
        forms.append(("robust", m_meas))
    hf = scen.cost.hessian_factor
    if hf:
        forms.append(("strongly_convex", hf))
    for form, mf in forms:
        reports.append(deviation_bound_check(scen, grid, grid, mf, form, sweep=sw))
        reports.append(global_loss_bound(scen, grid, grid, mf, form, tol, sweep=sw))
    checks = [r.to_record() for r in reports]
    if sc.sigma is not None and sc.m == 2:
        loc = local_loss_bound_check(scen, sc.sigma, grid,
                                     check_grid=SimplexGrid(2, max(LOCAL_CHECK_RESOLUTION, grid.resolution)))
        checks.append(loc.to_record())
    notes = {"delta": scen.delta, "rule_kind": scen.rule_kind, "lambda": scen.lam,
             "measured_robustness_factor": m_meas, "hessian_factor": hf,
             "grid_resolution": grid.resolution}
    header = ([f"p_true{i}" for i in range(sc.m)] + [f"report{i}" for i in range(sc.m)]
              + ["gain", "deviation", "loss", "truth_decision", "report_decision"])
    rows = [[*map(float, sw.truths[k]), *map(float, sw.reports[k]), float(sw.gains[k]),
             float(sw.deviations[k]), float(sw.losses[k]), int(sw.truth_decisions[k]),
             int(sw.report_decisions[k])] for k in range(len(sw.truths))]
    return _report("bounds", sc, checks, _opts(args), notes=notes), {"csv": (header, rows)}


def cmd_design(sc: ScenarioFile, args):
    if sc.m != 2:
        raise UnsupportedDimension(f"cost design supports two outcomes, scenario has {sc.m}")
    if sc.box is None:
        raise ScenarioError("box", "design needs an uncertainty box")
    sigma = args.sigma if args.sigma is not None else sc.sigma
    if sigma is None:
        raise ScenarioError("sigma", "give sigma in the file or with --sigma")
    base = sc.design.get("base", "strong")
    # the cost floor uses the best available bias: true, estimated, else box midpoint
    b = next((x for x in (sc.bias, sc.estimate) if x is not None), None)
    if b is None:
        b = uniform_estimate(sc.box, 0.5, sc.dm.labels)
    opts = _opts(args) | {"sigma": sigma}
    try:
        profile = required_profile(sc.dm, sc.box, sigma, sc.rule_kind, sc.design.get("eta", 1e-3))
    except InfeasibleDesign as e:
        chk = _check("feasibility", False, sigma, e.max_sigma, {"max_sigma": e.max_sigma}, message=str(e))
        return _report("design", sc, [chk], opts), {"error": str(e)}
    designed = construct_cost(profile, base, b)
    G = designed.cost
    lcg = SimplexGrid(2, LOCAL_CHECK_RESOLUTION)
    checks = []
    for r in profile.requirements:
        v = local_robustness_check(G, r.point, r.eps, r.m_factor, lcg)
        checks.append(_check(f"local_robustness[{sc.dm.labels[r.pair[0]]}|{sc.dm.labels[r.pair[1]]}]",
                             v.passed, v.measured, v.target, v.witness, eps=v.eps, tau=r.tau))
    grid = _grid(sc, args.grid, sweep=True)
    fam = scenario_family(sc.dm, sc.box, G, sc.rule_kind, sc.lam if sc.lam is not None else 0.5,
                          seed=args.seed)
    checks.append(verify_design(designed, fam, sigma, grid).to_record())
    notes = {"profile": profile.to_record(),
             "compensation": compensation_stats(designed, b, sc.policy, grid)}
    return _report("design", sc, checks, opts, notes=notes), {"cost": designed.to_record()}


def _flatten(rec: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in rec.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def cmd_market(sc: ScenarioFile, args):
    if sc.market is None:
        raise ScenarioError("market", "market experiment needs a market section")
    experts = list(sc.experts)
    if sc.market.get("order_by_bias"):
        experts = order_by_bias(experts)
    run = run_market(experts, sc.market["initial"], sc.cost, sc.policy, sc.market["scheme"],
                     realized=sc.market.get("realized"), seed=args.seed)
    if not run.conserved:
        raise CheckFailed("ledger conservation failed; nothing emitted")
    summary = _flatten(run.summary())
    checks = [
        _check("ledger_conservation", run.conserved, 0.0, 0.0),
        _check("participation", run.violations == 0, run.violations, 0,
               None if run.violations == 0 else
               {"steps": [s.step for s in run.steps if s.violation]}),
    ]
    rep = _report("market", sc, checks, _opts(args), summary=summary)
    return rep, {"events": run.event_lines(), "summary": summary}


COMMANDS = {"analyze": cmd_analyze, "bounds": cmd_bounds, "design": cmd_design, "market": cmd_market}


def _opts(args) -> dict[str, Any]:
    return {"grid": args.grid, "tol": args.tol, "seed": args.seed}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="propercomp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("scenario", help="scenario JSON file or bundled scenario name")
        p.add_argument("--grid", type=int, default=None, help="grid resolution override")
        p.add_argument("--tol", type=float, default=None, help="check tolerance override")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        if name == "design":
            p.add_argument("--sigma", type=float, default=None)
    return ap


def _emit(cmd: str, sc: ScenarioFile, report, extra, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{sc.name}.{cmd}"
    written = []
    rp = out / f"{stem}.report.json"
    dump_json(report, rp)
    written.append(rp)
    if "csv" in extra:
        header, rows = extra["csv"]
        cp = out / f"{stem}.csv"
        write_csv(cp, header, rows)
        written.append(cp)
    if "cost" in extra:
        cp = out / f"{sc.name}.designed_cost.json"
        dump_json(extra["cost"], cp)
        written.append(cp)
    if "events" in extra:
        ep = out / f"{sc.name}.events.jsonl"
        ep.write_text("".join(line + "\n" for line in extra["events"]))
        sp = out / f"{sc.name}.summary.json"
        dump_json(extra["summary"], sp)
        written += [ep, sp]
    return written


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        sc = load_scenario(args.scenario)
        if args.grid is not None and args.grid < 1:
            raise ScenarioError("--grid", "resolution must be positive")
        report, extra = COMMANDS[args.command](sc, args)
    except (ScenarioError, UnsupportedDimension, FileNotFoundError) as e:
        print(f"propercomp: invalid input: {e}", file=sys.stderr)
        return 2
    except CheckFailed as e:
        print(f"propercomp: {e}", file=sys.stderr)
        return 1
    written = _emit(args.command, sc, report, extra, out)
    if "error" in extra:
        print(f"propercomp: {extra['error']}", file=sys.stderr)
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    for p in written:
        print(f"wrote {p}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
