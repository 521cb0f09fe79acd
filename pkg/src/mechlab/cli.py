"""Command-line interface: ``mechlab <command> ...``.

Every command prints JSON (``replica`` prints CSV) with numbers rounded to
12 significant digits and 1-based buyer/seller indices.  Errors go to
stderr as JSON with a nonzero exit status.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from ._arith import to_fraction
from .assignment import solve_qap
from .game import (
    Strategy,
    accounting_residual,
    budget_report,
    opponent_battery,
    play,
    verify_stage1_honesty,
    verify_stage2_dominance,
)
from .model import validate_problem
from .probability import (
    StateDistribution,
    equilibrium_beliefs,
    expect_tensors,
    posterior,
    posterior_partition,
    signal_marginal,
)
from .replica import CSV_COLUMNS, ic_threshold, replica_rows
from .scenario import ScenarioError, dump_scenario, load_family, load_scenario, parse_scenario
from .scoring import CalibrationError, RewardSystem, calibrate
from .vcg import StageTwoReport, stage2_settle, truthful_report

EXIT_INVALID = 1  # input read fine but failed validation / verification
EXIT_ERROR = 2


# --- output -----------------------------------------------------------------------


def _clean(x):
    """Round floats to 12 significant digits; make everything JSON-native."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating, Fraction)):
        v = float(x)
        if not np.isfinite(v):
            return None
        return float(f"{v:.12g}")
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _emit(args, text: str, name: str):
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    else:
        sys.stdout.write(text)


class CliError(Exception):
    def __init__(self, code: str, message: str, **where):
        super().__init__(message)
        self.payload = {"error": code, "message": message, **where}


# --- argument helpers ----------------------------------------------------------------


def _load(args):
    return load_scenario(args.scenario, exact=True if args.rational else None)


def _posterior(problem, args):
    if getattr(args, "posterior", None):
        vals = [to_fraction(x) if problem.exact else float(Fraction(x)) for x in args.posterior.split(",")]
        return StateDistribution(np.array(vals, dtype=object if problem.exact else float)).probs
    if getattr(args, "signals", None):
        return posterior(problem, _signals(problem, args.signals)).probs
    raise CliError("usage", "give --posterior p1,...,pm or --signals s1,...,sn")


def _signals(problem, text):
    labels = [x.strip() for x in text.split(",")]
    try:
        return problem.profile(labels)
    except ValueError as exc:
        raise CliError("invalid signal", str(exc)) from None


def _rewards(problem, args):
    margin = args.margin if args.margin is not None else 0.01
    if getattr(args, "delta", None) is not None:
        delta = to_fraction(args.delta) if problem.exact else float(args.delta)
        return RewardSystem.spherical(delta), None
    cal = calibrate(problem, margin)
    return RewardSystem.spherical(cal.delta), cal


def _read_reports(problem, path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("parse error", f"{path}: {exc}") from None
    if not isinstance(data, list) or len(data) != problem.n:
        raise CliError("malformed report", f"{path}: need a list of {problem.n} reports")
    out = []
    for k, rep in enumerate(data):
        try:
            w = np.array(rep["w"], dtype=object)
            d = np.array(rep["d"], dtype=object)
            conv = (lambda v: to_fraction(v)) if problem.exact else (lambda v: float(Fraction(str(v))))
            w = np.vectorize(conv, otypes=[object])(w)
            d = np.vectorize(conv, otypes=[object])(d)
            if not problem.exact:
                w, d = w.astype(float), d.astype(float)
            out.append(StageTwoReport(w, d))
        except (KeyError, ValueError, TypeError) as exc:
            raise CliError("malformed report", f"report {k + 1}: {exc}", index=k + 1) from None
    return out


def _strategies(problem, path):
    """Strategy file: list of {"report": {signal: reported signal}, "stage_two": policy}."""
    n = problem.n
    if path is None:
        return [Strategy() for _ in range(n)]
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("parse error", f"{path}: {exc}") from None
    if not isinstance(data, list) or len(data) != n:
        raise CliError("malformed strategy", f"{path}: need a list of {n} buyer strategies")
    policies = {p.name: p for p in opponent_battery(problem, 0, stage=2)}
    out = []
    for i, spec in enumerate(data):
        alpha = None
        if "report" in spec:
            alpha = tuple(
                problem.signal_index(i, spec["report"].get(lab, lab)) for lab in problem.signal_sets[i]
            )
        name = spec.get("stage_two", "truthful")
        if name not in policies:
            raise CliError("malformed strategy", f"unknown stage-two policy {name!r}", buyer=i + 1)
        out.append(Strategy(alpha, None if name == "truthful" else policies[name].beta, name))
    return out


# --- commands ------------------------------------------------------------------------


def cmd_validate(args):
    scen = load_scenario(args.scenario, exact=True if args.rational else None, validate=False)
    report = validate_problem(scen.problem)
    _emit(args, dumps(report.to_json()), "validate.json")
    return 0 if report.passed else EXIT_INVALID


def cmd_solve(args):
    problem = _load(args).problem
    pi = _posterior(problem, args)
    w, d, kappa = expect_tensors(problem, pi)
    sol = solve_qap(w, d, kappa)
    out = {"posterior": pi, **sol.to_json()}
    _emit(args, dumps(out), "solve.json")
    return 0


def cmd_vcg(args):
    problem = _load(args).problem
    pi = _posterior(problem, args)
    reports = _read_reports(problem, args.reports) if args.reports else [
        truthful_report(problem, i) for i in range(problem.n)
    ]
    settle = stage2_settle(problem, pi, reports)
    _emit(args, dumps(settle.to_json()), "vcg.json")
    return 0


def cmd_calibrate(args):
    problem = _load(args).problem
    margin = args.margin if args.margin is not None else 0.01
    cal = calibrate(problem, margin)
    _emit(args, dumps(cal.to_json(problem)), "calibrate.json")
    return 0


def cmd_simulate(args):
    problem = _load(args).problem
    rewards, _ = _rewards(problem, args)
    b = _signals(problem, args.signals)
    run = play(problem, rewards, _strategies(problem, args.strategy), b)
    out = run.to_json(problem)
    out["accounting_residual"] = accounting_residual(run)
    _emit(args, dumps(out), "simulate.json")
    return 0


def cmd_verify(args):
    problem = _load(args).problem
    rewards, cal = _rewards(problem, args)
    s2 = verify_stage2_dominance(problem, rewards, seed=args.seed, misreports=args.misreports)
    s1 = verify_stage1_honesty(problem, rewards, seed=args.seed, min_candidates=args.candidates)
    out = {
        "seed": args.seed,
        "calibration": None if cal is None else cal.to_json(problem),
        "passed": s1.passed and s2.passed,
        "stage1": s1.to_json(),
        "stage2": s2.to_json(),
    }
    _emit(args, dumps(out), "verify.json")
    return 0 if out["passed"] else EXIT_INVALID


def cmd_replica(args):
    family = load_family(args.family)
    k = args.k if args.k is not None else family.k
    rows = replica_rows(family, _range(args.n_range), k, method=args.method, samples=args.samples,
                        seed=args.seed, timing=not args.no_runtime)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    _emit(args, buf.getvalue(), "replica.csv")
    if args.threshold:
        lo, hi = _range(args.threshold)[0], _range(args.threshold)[-1]
        res = ic_threshold(family, k, range(lo, hi + 1))
        sys.stderr.write(dumps({"n_hat": res["n_hat"], "range": [lo, hi]}))
    return 0


def cmd_report(args):
    """Truthful play at every signal profile with calibrated rewards."""
    problem = _load(args).problem
    rewards, cal = _rewards(problem, args)
    rows = []
    expected = 0
    mass = problem.prior.signal_mass()
    for b in problem.profiles():
        run = play(problem, rewards, [Strategy() for _ in range(problem.n)], b)
        budget = budget_report(run)
        expected = expected + mass[b] * budget["net"]
        rows.append({
            "signals": problem.labels(b),
            "matching": run.matching.to_json(),
            **budget,
            "accounting_residual": accounting_residual(run),
        })
    out = {
        "calibration": None if cal is None else cal.to_json(problem),
        "expected_net_payment": expected,
        "profiles": rows,
    }
    _emit(args, dumps(out), "report.json")
    return 0


def cmd_inspect(args):
    problem = _load(args).problem
    i = args.buyer - 1
    if not 0 <= i < problem.n:
        raise CliError("invalid buyer", f"buyer must be in 1..{problem.n}")
    r_i = problem.signal_index(i, args.signal)
    part = posterior_partition(problem, i, r_i)
    out = {"partition": part.to_json(problem), "beliefs": [], "marginal": signal_marginal(problem, i, r_i)}
    b_i = problem.signal_index(i, args.true_signal) if args.true_signal else r_i
    for cls in part.classes:
        table = equilibrium_beliefs(problem, i, r_i, cls.representative, b_i)
        out["beliefs"].append({"posterior": cls.representative, "table": table})
    _emit(args, dumps(out), "inspect.json")
    return 0


def cmd_canonical(args):
    scen = parse_scenario(Path(args.scenario).read_text(), args.scenario, exact=True if args.rational else None)
    # plain json: canonical floats must survive unrounded
    _emit(args, json.dumps(dump_scenario(scen), indent=2) + "\n", "scenario.json")
    return 0


def _range(text: str) -> list[int]:
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise CliError("usage", f"bad range {text!r}; expected a:b") from None
    if b < a:
        raise CliError("usage", f"empty range {text!r}")
    return list(range(a, b + 1))


# --- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for all randomized batteries")
    common.add_argument("--rational", action="store_true", help="exact rational arithmetic")
    common.add_argument("--out", metavar="DIR", help="write the artifact into DIR instead of stdout")

    parser = argparse.ArgumentParser(prog="mechlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mechlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("scenario", help="scenario JSON file")
        p.set_defaults(func=func)
        return p

    scenario_cmd("validate", cmd_validate, "check instance invariants")

    for name, func, help_ in (("solve", cmd_solve, "efficient assignment at a posterior"),
                              ("vcg", cmd_vcg, "stage-2 VCG settlement")):
        p = scenario_cmd(name, func, help_)
        g = p.add_mutually_exclusive_group()
        g.add_argument("--posterior", help="comma-separated state probabilities")
        g.add_argument("--signals", help="comma-separated signal labels inducing the posterior")
        if name == "vcg":
            p.add_argument("--reports", help="JSON list of per-buyer {w, d} reports (default: truthful)")

    p = scenario_cmd("calibrate", cmd_calibrate, "reward scale for honest signal reports")
    p.add_argument("--margin", type=float, default=None)

    for name, func, help_ in (("simulate", cmd_simulate, "play the two-stage game"),
                              ("verify", cmd_verify, "check both stages by brute force"),
                              ("report", cmd_report, "budget over all signal profiles")):
        p = scenario_cmd(name, func, help_)
        p.add_argument("--margin", type=float, default=None)
        p.add_argument("--delta", help="fixed reward scale instead of calibrating")
        if name == "simulate":
            p.add_argument("--signals", required=True, help="true signal labels")
            p.add_argument("--strategy", help="strategy JSON (default: all truthful)")
        if name == "verify":
            p.add_argument("--misreports", type=int, default=50)
            p.add_argument("--candidates", type=int, default=200)

    p = scenario_cmd("inspect", cmd_inspect, "posterior partition and beliefs")
    p.add_argument("--buyer", type=int, default=1, help="1-based buyer")
    p.add_argument("--signal", required=True, help="reported signal label")
    p.add_argument("--true-signal", help="observed signal label (default: the reported one)")

    scenario_cmd("canonical", cmd_canonical, "print the canonical explicit scenario")

    p = sub.add_parser("replica", parents=[common], help="replica-economy experiment (CSV)")
    p.add_argument("family", help="family JSON file")
    p.add_argument("--n-range", default="2:12", help="inclusive range a:b")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--method", choices=("types", "profiles", "mc"), default="types")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--no-runtime", action="store_true", help="write 0 in the runtime column")
    p.add_argument("--threshold", metavar="A:B", help="also scan A:B for the IC threshold (stderr)")
    p.set_defaults(func=cmd_replica)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        sys.stderr.write(json.dumps(_clean(exc.to_json())) + "\n")
    except CliError as exc:
        sys.stderr.write(json.dumps(_clean(exc.payload)) + "\n")
    except CalibrationError as exc:
        sys.stderr.write(json.dumps({"error": "calibration failure", "message": str(exc)}) + "\n")
    except ValueError as exc:
        sys.stderr.write(json.dumps({"error": "invalid input", "message": str(exc)}) + "\n")
    return EXIT_ERROR


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
