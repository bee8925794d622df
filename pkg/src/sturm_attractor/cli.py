"""Command line pipeline: problem file in, report, graph and profiles out.

Usage::

    sturm-attractor --problem ci.toml --stage graph --out results/

Stages form a chain ``equilibria < permutation < graph < verify``; asking for
one runs all earlier ones.  Exit codes come from the exception classes in
:mod:`sturm_attractor.errors`.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ProblemFileSyntaxError, SturmError, ValidationError, VerificationContradiction
from .estimator import SturmAttractor
from .shoot import ProblemSpec

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("sturm_attractor")

STAGES = ("equilibria", "permutation", "graph", "verify")
FORMAT_VERSION = 1
RESERVED = {"a": str, "f": str, "name": str, "b_min": float, "b_max": float, "scan": int,
            "rtol": float, "atol": float, "grid": int, "margin": float}


def parse_problem_text(text: str, path=None) -> dict:
    """Flat ``key = value`` TOML: strings and numbers only, no tables or arrays."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ProblemFileSyntaxError(str(exc), path, getattr(exc, "lineno", None)) from None
    lines = text.splitlines()

    def line_of(key):
        for n, line in enumerate(lines, start=1):
            if line.strip().startswith(key):
                return n
        return None

    for key, value in data.items():
        if isinstance(value, bool) or not isinstance(value, (str, int, float)):
            raise ProblemFileSyntaxError(
                f"value of {key!r} must be a string or a number", path, line_of(key))
    return data


def load_problem(path) -> ProblemSpec:
    """Read a problem file; every key that is not reserved is a parameter."""
    path = Path(path)
    text = path.read_text()
    data = parse_problem_text(text, str(path))
    for key in ("a", "f"):
        if key not in data:
            raise ValidationError(f"{path}: missing required key {key!r}")
    options, params = {}, {}
    for key, value in data.items():
        if key in RESERVED:
            kind = RESERVED[key]
            if kind is str and not isinstance(value, str):
                raise ValidationError(f"{path}: {key!r} must be a quoted string")
            if kind is not str and isinstance(value, str):
                raise ValidationError(f"{path}: {key!r} must be a number")
            if kind is int and float(value) != int(value):
                raise ValidationError(f"{path}: {key!r} must be an integer")
            options[key] = kind(value)
        elif isinstance(value, str):
            raise ValidationError(f"{path}: parameter {key!r} must be a number")
        else:
            params[key] = float(value)
    options.setdefault("name", path.stem)
    a, f = options.pop("a"), options.pop("f")
    problem = ProblemSpec.from_strings(a, f, params, **options)
    problem.check_parabolicity()
    log.info("problem %s: a = %s, f = %s, params = %s", problem.name, a, f, params)
    return problem


def report_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("report.schema.json").read_text())


def _num(v):
    """JSON-safe float (non-finite values become null)."""
    v = float(v)
    return v if math.isfinite(v) else None


def _problem_record(problem: ProblemSpec, window) -> dict:
    return {
        "name": problem.name,
        "a": problem.a.text,
        "f": problem.f.text,
        "params": {k: float(v) for k, v in sorted(problem.params.items())},
        "window": None if window is None else [float(window[0]), float(window[1])],
        "scan": problem.scan,
        "rtol": problem.rtol,
        "atol": problem.atol,
        "grid": problem.grid,
        "margin": problem.margin,
    }


def _equilibrium_record(e) -> dict:
    return {
        "label": e.label,
        "b": e.b,
        "u_pi": e.u_end,
        "amplitude": e.amplitude,
        "morse": e.morse,
        "angle_end": _num(e.angle_end),
        "hyperbolic_margin": _num(e.hyperbolic_margin),
        "residual": e.residual,
        "root_tol": e.root_tol,
        "oracle_top": [_num(v) for v in e.oracle_top],
    }


class _Collector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


def write_profiles(path, equilibria) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"u_{e.label}" for e in equilibria])
        if not equilibria:
            return
        x = equilibria[0].x
        cols = np.array([e.u for e in equilibria])
        for k in range(x.size):
            w.writerow([repr(float(x[k]))] + [repr(float(v)) for v in cols[:, k]])


def run(problem_path, stage: str = "graph", out=".", seed: int = 0, grid=None, scan=None,
        tol=None, sim_grid: int = 101, t_end: float = 200.0) -> int:
    """Run the pipeline up to ``stage`` and write artifacts into ``out``.

    Returns the process exit status.  ``report.json`` is written in every
    case where the problem file could be read, including failures.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    collector = _Collector()
    log.addHandler(collector)
    report = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "stages": list(STAGES[: STAGES.index(stage) + 1]),
        "status": "ok",
        "error": None,
        "problem": None,
        "equilibria": None,
        "permutation": None,
        "zero_matrix": None,
        "crosscheck": None,
        "edges": None,
        "closure_edges": None,
        "verification": None,
        "warnings": collector.messages,
    }
    code = 0
    try:
        problem = load_problem(problem_path)
        overrides = {}
        if tol is not None:
            overrides.update(rtol=float(tol), atol=float(tol) * 1e-2)
        model = SturmAttractor(scan=scan, grid=grid, sim_grid=sim_grid, t_end=t_end,
                               random_state=int(seed), **overrides)
        report["problem"] = _problem_record(model._problem(problem), None)
        model.fit_equilibria(problem)
        report["problem"] = _problem_record(model.problem_, model.window_)
        report["equilibria"] = [_equilibrium_record(e) for e in model.equilibria_]
        write_profiles(out / "profiles.csv", model.equilibria_)
        if "permutation" in report["stages"]:
            model.fit_permutation()
            report["permutation"] = model.permutation_.as_list()
            report["zero_matrix"] = model.zero_matrix_.tolist()
            report["crosscheck"] = {
                "morse": model.crosscheck_.morse,
                "zero_matrix": model.crosscheck_.zeros.tolist(),
                "morse_ok": model.crosscheck_.morse_ok,
                "zeros_ok": model.crosscheck_.zeros_ok,
            }
        if "graph" in report["stages"]:
            model.fit_graph()
            report["edges"] = [list(e) for e in model.graph_.edges]
            report["closure_edges"] = sorted(list(e) for e in model.graph_.closure().edges())
            (out / "attractor.dot").write_text(model.graph_.to_dot(model.problem_.name or "attractor"))
        if "verify" in report["stages"]:
            result = model.verify(strict=False)
            report["verification"] = {
                "grid": sim_grid,
                "t_end": t_end,
                "launches": [
                    {"source": l.source, "seeds": list(l.seeds), "reached": list(l.reached)}
                    for l in result["launches"]
                ],
                "edges": [{"source": v.source, "target": v.target, "verdict": v.verdict,
                           "seeds": list(v.seeds)} for v in result["edges"]],
                "contradictions": [list(c) for c in result["contradictions"]],
            }
            if result["contradictions"]:
                raise VerificationContradiction(
                    f"simulated connections outside the graph: {result['contradictions']}")
    except SturmError as exc:
        code = exc.exit_code
        report["status"] = "error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
        log.error("%s: %s", type(exc).__name__, exc)
    finally:
        log.removeHandler(collector)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sturm-attractor",
                                description="Equilibria and connection graph of a Sturm attractor.")
    p.add_argument("--problem", required=True, help="problem file (flat TOML)")
    p.add_argument("--stage", choices=STAGES, default="graph", help="last stage to run")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for random seeding directions")
    p.add_argument("--grid", type=int, help="profile grid points")
    p.add_argument("--scan", type=int, help="shooting scan resolution")
    p.add_argument("--tol", type=float, help="relative integration tolerance")
    p.add_argument("--sim-grid", type=int, default=101, help="simulation nodes for --stage verify")
    p.add_argument("--t-end", type=float, default=200.0, help="simulation horizon for --stage verify")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not 0 <= args.seed < 2**64:
        print("--seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        return run(args.problem, args.stage, args.out, args.seed, args.grid, args.scan,
                   args.tol, args.sim_grid, args.t_end)
    except OSError as exc:
        print(f"cannot read problem file: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
