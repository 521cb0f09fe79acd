"""Scenario and family files, seeded instance generation.

Scenario files are JSON with 0-based indices.  Numbers may be JSON numbers
or strings such as ``"1/3"``; in rational mode every number is read as an
exact fraction (decimals by their written value).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from ._arith import PROB_TOL, to_fraction
from ._parallel import child_rng
from .model import AssignmentProblem, validate_problem
from .priors import DensePrior, ProductPrior

_NUM = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*-?[0-9./eE+-]+\s*$"}]}
_NESTED = {"type": "array", "items": {"anyOf": [_NUM, {"$ref": "#/$defs/nested"}]}}

_OPTIONS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "rational": {"type": "boolean"},
        "margin": {**_NUM},
        "delta_floor": {**_NUM},
        "k": {"type": "integer", "minimum": 1},
        "misreports": {"type": "integer", "minimum": 1},
        "candidates": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
    },
}

_CI_PRIOR = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lambda", "Q"],
    "properties": {"lambda": {"type": "array", "items": _NUM}, "Q": {"type": "array", "items": {"type": "array", "items": _NUM}}},
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"nested": _NESTED},
    "type": "object",
    "oneOf": [
        {
            "additionalProperties": False,
            "required": ["n", "states", "signal_sets", "u", "v", "prior", "M"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "states": {"type": "array", "items": {"type": ["string", "integer"]}, "minItems": 1},
                "signal_sets": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": ["string", "integer"]}, "minItems": 1},
                },
                "u": _NESTED,
                "v": _NESTED,
                "c": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["i", "j", "p", "q", "theta", "value"],
                        "properties": {
                            "i": {"type": "integer", "minimum": 0},
                            "j": {"type": "integer", "minimum": 0},
                            "p": {"type": "integer", "minimum": 0},
                            "q": {"type": "integer", "minimum": 0},
                            "theta": {"type": ["integer", "string"]},
                            "value": _NUM,
                        },
                    },
                },
                "prior": {
                    "type": "object",
                    "oneOf": [
                        {"additionalProperties": False, "required": ["table"], "properties": {"table": _NESTED}},
                        {
                            "additionalProperties": False,
                            "required": ["conditionally_independent"],
                            "properties": {"conditionally_independent": _CI_PRIOR},
                        },
                    ],
                },
                "M": _NUM,
                "options": _OPTIONS,
            },
        },
        {
            "additionalProperties": False,
            "required": ["generator"],
            "properties": {
                "generator": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n", "m", "seed"],
                    "properties": {
                        "n": {"type": "integer", "minimum": 1},
                        "m": {"type": "integer", "minimum": 1},
                        "signal_sizes": {
                            "oneOf": [
                                {"type": "integer", "minimum": 1},
                                {"type": "array", "items": {"type": "integer", "minimum": 1}},
                            ]
                        },
                        "M": _NUM,
                        "seed": {"type": "integer"},
                        "density": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                },
                "options": _OPTIONS,
            },
        },
    ],
}

FAMILY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["lambda", "Q"],
    "properties": {
        "states": {"type": "array", "items": {"type": ["string", "integer"]}},
        "signals": {"type": "array", "items": {"type": ["string", "integer"]}},
        "lambda": {"type": "array", "items": _NUM, "minItems": 1},
        "Q": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "M": _NUM,
        "seed": {"type": "integer"},
        "k": {"type": "integer", "minimum": 1},
        "density": {"type": "number", "minimum": 0, "maximum": 1},
    },
}


class ScenarioError(ValueError):
    """Unreadable or invalid scenario; carries a machine-readable payload."""

    def __init__(self, code: str, message: str, **where):
        super().__init__(message)
        self.code = code
        self.where = where

    def to_json(self) -> dict:
        return {"error": self.code, "message": str(self), **self.where}


@dataclass(eq=False)
class Scenario:
    problem: AssignmentProblem
    options: dict = field(default_factory=dict)
    generator: dict | None = None
    source: str | None = None

    @property
    def exact(self) -> bool:
        return self.problem.exact


# --- parsing --------------------------------------------------------------------


def _parse_json(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            "parse error", f"{source}: {exc.msg} at line {exc.lineno} column {exc.colno}",
            line=exc.lineno, column=exc.colno,
        ) from None


def _check_schema(data, schema, source: str):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ScenarioError("schema violation", f"{source}: {err.message} at {pointer}", pointer=pointer)


def _num(x, exact: bool):
    if exact:
        return to_fraction(x)
    return float(Fraction(x.strip())) if isinstance(x, str) else float(x)


def _nested(x, exact: bool, shape, name: str) -> np.ndarray:
    try:
        arr = np.array(x, dtype=object)
    except ValueError:
        arr = None
    if arr is None or arr.shape != tuple(shape):
        got = None if arr is None else arr.shape
        raise ScenarioError("schema violation", f"{name} must have shape {tuple(shape)}, got {got}",
                            pointer=f"/{name}")
    out = np.empty(arr.shape, dtype=object)
    out.ravel()[:] = [_num(v, exact) for v in arr.ravel()]
    return out if exact else out.astype(float)


def _reject_negative(arr: np.ndarray, name: str):
    bad = np.argwhere(arr < 0)
    if len(bad):
        idx = "/".join(str(int(k)) for k in bad[0])
        raise ScenarioError(
            "tensor out of bounds", f"{name} has a negative entry (entries must be nonnegative)",
            pointer=f"/{name}/{idx}",
        )


def _check_normalized(total, pointer: str):
    ok = total == 1 if isinstance(total, Fraction) else abs(float(total) - 1.0) <= PROB_TOL
    if not ok:
        raise ScenarioError("prior not normalized", f"prior sums to {float(total):.12g}", pointer=pointer)


def _state_index(theta, states) -> int:
    if isinstance(theta, int):
        return theta
    return list(states).index(str(theta))


def problem_from_dict(data: dict, exact: bool = False) -> AssignmentProblem:
    """Build an instance from an explicit (already schema-checked) scenario."""
    n = data["n"]
    states = [str(s) for s in data["states"]]
    signal_sets = [[str(x) for x in s] for s in data["signal_sets"]]
    m = len(states)
    if len(signal_sets) != n:
        raise ScenarioError("schema violation", f"signal_sets must list {n} buyers", pointer="/signal_sets")
    u = _nested(data["u"], exact, (n, n, m), "u")
    v = _nested(data["v"], exact, (n, n, m), "v")
    _reject_negative(u, "u")
    _reject_negative(v, "v")
    c = np.empty((n, n, n, n, m), dtype=object)
    c.fill(Fraction(0) if exact else 0.0)
    for k, e in enumerate(data.get("c", [])):
        i, j, p, q = e["i"], e["j"], e["p"], e["q"]
        try:
            t = _state_index(e["theta"], states)
        except ValueError:
            raise ScenarioError("schema violation", f"unknown state {e['theta']!r}", pointer=f"/c/{k}/theta") from None
        if max(i, j, p, q) >= n or not 0 <= t < m:
            raise ScenarioError("schema violation", "externality index out of range", pointer=f"/c/{k}")
        if p == i or q == j:
            raise ScenarioError("schema violation", "externality entries need p != i and q != j", pointer=f"/c/{k}")
        val = _num(e["value"], exact)
        if val < 0:
            raise ScenarioError("tensor out of bounds", "externality entries must be nonnegative",
                                pointer=f"/c/{k}/value")
        c[i, j, p, q, t] = val
    if not exact:
        c = c.astype(float)
    prior_spec = data["prior"]
    if "table" in prior_spec:
        table = _nested(prior_spec["table"], exact, (m, *[len(s) for s in signal_sets]), "prior/table")
        _reject_negative(table, "prior/table")
        _check_normalized(table.sum(), "/prior/table")
        prior = DensePrior(table)
    else:
        ci = prior_spec["conditionally_independent"]
        lam = np.array([_num(x, exact) for x in ci["lambda"]], dtype=object if exact else float)
        Q = _nested(ci["Q"], exact, (m, len(signal_sets[0])), "prior/conditionally_independent/Q")
        if any(len(s) != len(signal_sets[0]) for s in signal_sets):
            raise ScenarioError("schema violation", "conditionally independent priors need a common signal set",
                                pointer="/signal_sets")
        if len(lam) != m:
            raise ScenarioError("schema violation", f"lambda must have {m} entries",
                                pointer="/prior/conditionally_independent/lambda")
        _reject_negative(lam, "prior/conditionally_independent/lambda")
        _reject_negative(Q, "prior/conditionally_independent/Q")
        _check_normalized(lam.sum(), "/prior/conditionally_independent/lambda")
        for t in range(m):
            _check_normalized(Q[t].sum(), f"/prior/conditionally_independent/Q/{t}")
        prior = ProductPrior(lam, Q, n)
    M = _num(data["M"], exact)
    return AssignmentProblem(states, signal_sets, u, v, c, prior, M)


def parse_scenario(text: str, source: str = "<scenario>", exact: bool | None = None,
                   validate: bool = True) -> Scenario:
    data = _parse_json(text, source)
    _check_schema(data, SCENARIO_SCHEMA, source)
    options = dict(data.get("options", {}))
    if exact is None:
        exact = bool(options.get("rational", False))
    if "generator" in data:
        gen = data["generator"]
        problem = generate_problem(
            gen["n"], gen["m"], gen.get("signal_sizes", 2), gen.get("M", 1), gen["seed"],
            density=gen.get("density", 1.0), exact=exact,
        )
        scen = Scenario(problem, options, dict(gen), source)
    else:
        scen = Scenario(problem_from_dict(data, exact), options, None, source)
    if validate:
        report = validate_problem(scen.problem)
        if not report.passed:
            first = report.failures[0]
            raise ScenarioError(first.code, f"{source}: {first.message}", failures=report.to_json()["failures"])
    return scen


def load_scenario(path, exact: bool | None = None, validate: bool = True) -> Scenario:
    """Read, schema-check and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError("io error", f"{path}: {exc.strerror}") from None
    return parse_scenario(text, str(path), exact, validate)


def load_family(path, exact: bool = False):
    """Read a replica family file: lambda, Q, and optional M, seed, k, density."""
    from .replica import ReplicaFamily

    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError("io error", f"{path}: {exc.strerror}") from None
    data = _parse_json(text, str(path))
    _check_schema(data, FAMILY_SCHEMA, str(path))
    lam = np.array([_num(x, exact) for x in data["lambda"]], dtype=object if exact else float)
    Q = np.array([[_num(x, exact) for x in row] for row in data["Q"]], dtype=object if exact else float)
    if Q.ndim != 2 or Q.shape[0] != len(lam):
        raise ScenarioError("schema violation", "Q needs one row per state", pointer="/Q")
    _reject_negative(lam, "lambda")
    _reject_negative(Q, "Q")
    _check_normalized(lam.sum(), "/lambda")
    for t in range(len(lam)):
        _check_normalized(Q[t].sum(), f"/Q/{t}")
    try:
        family = ReplicaFamily(
            lam, Q, _num(data.get("M", 1), exact), data.get("seed", 0), data.get("k", 1),
            data.get("density", 1.0), data.get("states"), data.get("signals"),
        )
    except ValueError as exc:
        raise ScenarioError("full support violated", str(exc)) from None
    if not family.informative():
        raise ScenarioError("conditionals coincide", "two rows of the pairwise conditional coincide")
    return family


# --- serialization -----------------------------------------------------------------


def _out(x):
    if isinstance(x, Fraction):
        return x.numerator if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    return float(x)


def _out_array(a) -> list:
    a = np.asarray(a)
    if a.ndim == 0:
        return _out(a.item())
    return [_out_array(x) for x in a]


def problem_to_dict(problem: AssignmentProblem) -> dict:
    n, m = problem.n, problem.m
    entries = []
    for idx in zip(*np.nonzero(problem.c != 0)):
        i, j, p, q, t = (int(k) for k in idx)
        entries.append({"i": i, "j": j, "p": p, "q": q, "theta": t, "value": _out(problem.c[idx])})
    prior = problem.prior
    if isinstance(prior, ProductPrior):
        pspec = {"conditionally_independent": {"lambda": _out_array(prior.lam), "Q": _out_array(prior.Q)}}
    else:
        pspec = {"table": _out_array(prior.table())}
    return {
        "n": n,
        "states": list(problem.states),
        "signal_sets": [list(s) for s in problem.signal_sets],
        "u": _out_array(problem.u),
        "v": _out_array(problem.v),
        "c": entries,
        "prior": pspec,
        "M": _out(problem.M),
    }


def dump_scenario(scenario: Scenario) -> dict:
    """Canonical explicit form; re-parses to an equal instance."""
    out = problem_to_dict(scenario.problem)
    options = dict(scenario.options)
    if scenario.exact:
        options["rational"] = True
    if options:
        out["options"] = options
    return out


def problems_equal(a: AssignmentProblem, b: AssignmentProblem) -> bool:
    if (a.states, a.signal_sets) != (b.states, b.signal_sets) or a.M != b.M:
        return False
    arrays = [(a.u, b.u), (a.v, b.v), (a.c, b.c), (a.prior.table(), b.prior.table())]
    return all(x.shape == y.shape and bool((x == y).all()) for x, y in arrays)


# --- generation --------------------------------------------------------------------


def _grid(rng, shape, exact: bool, den: int = 100):
    """Uniform draws on the grid ``{0, 1/den, ..., 1}``."""
    k = rng.integers(0, den + 1, size=shape)
    if exact:
        out = np.empty(shape, dtype=object)
        out.ravel()[:] = [Fraction(int(x), den) for x in k.ravel()]
        return out
    return k / den


def random_prior(rng, m: int, sizes, exact: bool) -> DensePrior:
    """Strictly positive random joint table with small integer weights."""
    weights = rng.integers(1, 21, size=(m, *sizes))
    total = int(weights.sum())
    if exact:
        table = np.empty(weights.shape, dtype=object)
        table.ravel()[:] = [Fraction(int(x), total) for x in weights.ravel()]
    else:
        table = weights / total
    return DensePrior(table)


def generate_problem(n: int, m: int, signal_sizes=2, M=1, seed: int = 0, density: float = 1.0,
                     exact: bool = False, max_tries: int = 100) -> AssignmentProblem:
    """Seeded random instance that passes validation.

    Entries of u, v, c are drawn on a 1/100 grid scaled by M (c kept with
    probability ``density``); the prior has integer weights 1..20.
    """
    sizes = [signal_sizes] * n if isinstance(signal_sizes, int) else list(signal_sizes)
    if len(sizes) != n:
        raise ValueError("need one signal-set size per buyer")
    Mv = to_fraction(M) if exact else float(M)
    for attempt in range(max_tries):
        rng = child_rng(seed, "generate", n, m, attempt)
        u = _grid(rng, (n, n, m), exact) * Mv
        v = _grid(rng, (n, n, m), exact) * Mv
        c = _grid(rng, (n, n, n, n, m), exact) * Mv
        if density < 1.0:
            keep = rng.random((n, n, n, n, m)) < density
            c = np.where(keep, c, c * 0)
        prior = random_prior(rng, m, sizes, exact)
        problem = AssignmentProblem(
            [f"t{k + 1}" for k in range(m)],
            [[f"s{x + 1}" for x in range(k)] for k in sizes],
            u, v, c, prior, Mv,
        )
        if validate_problem(problem).passed:
            return problem
    raise ValueError("could not generate a valid instance")


__all__ = [
    "FAMILY_SCHEMA",
    "SCENARIO_SCHEMA",
    "Scenario",
    "ScenarioError",
    "dump_scenario",
    "generate_problem",
    "load_family",
    "load_scenario",
    "parse_scenario",
    "problem_from_dict",
    "problem_to_dict",
    "problems_equal",
    "random_prior",
]
