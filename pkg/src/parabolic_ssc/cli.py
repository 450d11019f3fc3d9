"""Batch front end: read a JSON run configuration, run one pipeline, write reports.

Usage::

    parabolic-ssc --config run.json --out results/ [--workers N] [--dump-fields]

Exit codes: 0 when every check passed, 2 when a check produced a
counterexample (or the optimizer did not converge), 1 on any execution or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import conditions as cond
from .errors import EmptyConeWarning, InvalidInputError
from .functional import eval_cost
from .grid import TERMINAL, Field, SpaceTimeGrid, read_field_csv, write_field_csv
from .instances import STANDARD
from .optimize import OptimizeOptions, proximal_gradient, stationarity_residual
from .pde import SolverOptions, solve_adjoint, solve_state
from .problem import (
    CostIntegrands,
    OperatorA,
    ProblemSpec,
    build_stationary_instance,
    nonlinearity_from_dict,
    validate,
)

MODES = ("solve", "verify-foc", "verify-soc", "growth", "bounds", "cones")
EXIT_OK, EXIT_ERROR, EXIT_COUNTEREXAMPLE = 0, 1, 2

_FIELD = {
    "oneOf": [
        {"type": "number"},
        {"type": "string"},
        {"type": "array"},
        {"type": "object", "properties": {"csv": {"type": "string"}}, "required": ["csv"], "additionalProperties": False},
    ]
}
_GRID = {
    "type": "object",
    "properties": {
        "d": {"enum": [1, 2]},
        "n_x": {"type": "integer", "minimum": 1},
        "n_t": {"type": "integer", "minimum": 1},
        "T": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["d", "n_x", "n_t"],
    "additionalProperties": False,
}
_OPERATOR = {
    "type": "object",
    "properties": {"a": {"type": "array"}, "b": {"type": "array"}},
    "additionalProperties": False,
}
_NONLINEARITY = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["zero", "odd_polynomial", "exponential"]},
        "coefficients": {"type": "array", "items": {"type": "number"}},
        "gain": {"type": "number"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}
_COMMON_PROBLEM = {
    "grid": _GRID,
    "operator": _OPERATOR,
    "nonlinearity": _NONLINEARITY,
    "alpha": {"type": "number"},
    "beta": {"type": "number"},
    "mu": {"type": "number", "minimum": 0},
    "nu_omega": {"enum": [0, 1]},
    "y0": _FIELD,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "parabolic-ssc run configuration",
    "type": "object",
    "properties": {
        "mode": {"enum": list(MODES)},
        "seed": {"type": "integer", "minimum": 0},
        "problem": {
            "type": "object",
            "properties": {**_COMMON_PROBLEM, "y_d": _FIELD, "y_omega": _FIELD},
            "required": ["grid", "alpha", "beta", "y_d"],
            "additionalProperties": False,
        },
        "manufactured": {
            "type": "object",
            "properties": {**_COMMON_PROBLEM, "phibar": {"type": "string"}},
            "required": ["grid", "alpha", "beta", "phibar"],
            "additionalProperties": False,
        },
        "instance": {
            "type": "object",
            "properties": {"name": {"enum": sorted(STANDARD)}, "params": {"type": "object"}},
            "required": ["name"],
            "additionalProperties": False,
        },
        "candidate": _FIELD,
        "start": _FIELD,
        "optimizer": {
            "type": "object",
            "properties": {
                "s0": {"type": "number"},
                "backtrack": {"type": "number"},
                "sufficient_decrease": {"type": "number"},
                "max_iters": {"type": "integer"},
                "stop_tol": {"type": "number"},
                "seed": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "newton_tol": {"type": "number"},
                "newton_max_iter": {"type": "integer"},
                "max_halvings": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "samples": {"type": "integer", "minimum": 1},
        "tau": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1}]},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "rho_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "foc_tol": {"type": "number", "exclusiveMinimum": 0},
        "dump_fields": {"type": "boolean"},
    },
    "required": ["mode"],
    "oneOf": [{"required": ["problem"]}, {"required": ["manufactured"]}, {"required": ["instance"]}],
    "additionalProperties": False,
}

_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sign", "minimum", "maximum", "clip", "where", "pi")
}


class ConfigError(InvalidInputError):
    """Configuration problem, with the offending location in the message."""


def _expression(src: str, where: str):
    try:
        code = compile(src, f"<{where}>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"{where}: bad expression {src!r} ({exc.msg})") from exc
    for name in code.co_names:
        if name not in _EXPR_NAMES and name not in ("x0", "x1", "t"):
            raise ConfigError(f"{where}: unknown name {name!r} in expression {src!r}")

    def fn(x, t=None):
        env = dict(_EXPR_NAMES, x0=x[:, 0], x1=x[:, 1] if x.shape[1] > 1 else None, t=t)
        return eval(code, {"__builtins__": {}}, env)

    return fn


def field_from_config(value, grid: SpaceTimeGrid, kind: str, where: str, base: Path) -> Field:
    """Build a field from a number, an expression in ``x0, x1, t``, a CSV reference or a nested list."""
    try:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return grid.full(value, kind)
        if isinstance(value, str):
            fn = _expression(value, where)
            if kind == TERMINAL:
                return grid.evaluate(lambda x: fn(x, grid.T), kind)
            return grid.evaluate(fn, kind)
        if isinstance(value, dict):
            fld = read_field_csv(base / value["csv"], grid)
            if fld.kind != kind:
                raise ConfigError(f"{where}: CSV holds a {fld.kind} field, expected {kind}")
            return fld
        return Field(grid, value, kind)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure becomes a located diagnostic
        raise ConfigError(f"{where}: {exc}") from exc


def _grid(doc, where) -> SpaceTimeGrid:
    try:
        return SpaceTimeGrid(doc["d"], doc["n_x"], doc["n_t"], doc.get("T", 1.0))
    except Exception as exc:  # noqa: BLE001
        raise ConfigError(f"{where}.grid: {exc}") from exc


def _operator(doc, d, where) -> OperatorA:
    try:
        return OperatorA(doc.get("a", np.eye(d)), doc.get("b"))
    except Exception as exc:  # noqa: BLE001
        raise ConfigError(f"{where}.operator: {exc}") from exc


class Setup:
    """Problem, candidate control and options assembled from a configuration."""

    def __init__(self, cfg: dict, base: Path):
        self.cfg = cfg
        self.seed = int(cfg.get("seed", 0))
        self.solver_opts = SolverOptions(**cfg.get("solver", {}))
        try:
            self.opt_opts = OptimizeOptions(**{"seed": self.seed, **cfg.get("optimizer", {})})
        except InvalidInputError as exc:
            raise ConfigError(f"optimizer: {exc}") from exc
        self.ubar = self.phibar = None
        if "instance" in cfg:
            name = cfg["instance"]["name"]
            try:
                inst = STANDARD[name](**cfg["instance"].get("params", {}))
            except TypeError as exc:
                raise ConfigError(f"instance.params: {exc}") from exc
            self.spec, self.ubar, self.phibar = inst.spec, inst.ubar, inst.phibar
        elif "manufactured" in cfg:
            doc = cfg["manufactured"]
            grid = _grid(doc["grid"], "manufactured")
            fn = _expression(doc["phibar"], "manufactured.phibar")
            y0 = doc.get("y0")
            y0 = None if y0 is None else field_from_config(y0, grid, TERMINAL, "manufactured.y0", base)
            inst = build_stationary_instance(
                grid,
                _operator(doc.get("operator", {}), grid.d, "manufactured"),
                nonlinearity_from_dict(doc.get("nonlinearity", {"kind": "zero"})),
                float(doc.get("mu", 0.0)),
                float(doc["alpha"]),
                float(doc["beta"]),
                fn,
                nu_omega=int(doc.get("nu_omega", 0)),
                y0=y0,
                opts=self.solver_opts,
            )
            self.spec, self.ubar, self.phibar = inst.spec, inst.ubar, inst.phibar
        else:
            doc = cfg["problem"]
            grid = _grid(doc["grid"], "problem")
            nu = int(doc.get("nu_omega", 0))
            y_d = field_from_config(doc["y_d"], grid, "space-time", "problem.y_d", base)
            y_om = doc.get("y_omega")
            y_om = None if y_om is None else field_from_config(y_om, grid, TERMINAL, "problem.y_omega", base)
            y0 = doc.get("y0")
            y0 = None if y0 is None else field_from_config(y0, grid, TERMINAL, "problem.y0", base)
            try:
                self.spec = ProblemSpec(
                    grid,
                    _operator(doc.get("operator", {}), grid.d, "problem"),
                    nonlinearity_from_dict(doc.get("nonlinearity", {"kind": "zero"})),
                    CostIntegrands(y_d, nu, y_om),
                    float(doc["alpha"]),
                    float(doc["beta"]),
                    float(doc.get("mu", 0.0)),
                    y0,
                )
            except InvalidInputError as exc:
                raise ConfigError(f"problem: {exc}") from exc
        report = validate(self.spec)
        if not report.passed:
            raise ConfigError("problem: " + "; ".join(report.failures))
        self.warnings = list(report.warnings)
        g = self.spec.grid
        self.start = field_from_config(cfg.get("start", 0.0), g, "space-time", "start", base)
        if "candidate" in cfg:
            self.ubar = field_from_config(cfg["candidate"], g, "space-time", "candidate", base)
            self.phibar = None
        self.trace = None

    def candidate(self):
        """``u_bar``: configured, manufactured, or computed by proximal gradient."""
        if self.ubar is None:
            self.ubar, self.trace = proximal_gradient(self.spec, self.start, self.opt_opts, self.solver_opts)
        return self.ubar


def _taus(cfg) -> list:
    tau = cfg.get("tau", [1e-3, 1e-2, 1e-1])
    return [float(tau)] if isinstance(tau, (int, float)) else [float(t) for t in tau]


def _fmt(x) -> str:
    return repr(float(x))


def run_pipeline(setup: Setup, out: Path, workers: int, dump: bool) -> tuple[int, list[str]]:
    """Run the configured mode; returns the exit code and summary lines."""
    cfg, spec = setup.cfg, setup.spec
    mode = cfg["mode"]
    n = int(cfg.get("samples", 200))
    lines = [f"mode: {mode}", f"seed: {setup.seed}", f"grid: {spec.grid}"]
    lines += [f"warning: {w}" for w in setup.warnings]
    code = EXIT_OK

    if mode == "solve":
        u, trace = proximal_gradient(spec, setup.start, setup.opt_opts, setup.solver_opts)
        trace.write_csv(out / "trace.csv")
        trace.write_csv(out / "report.csv")
        cost = eval_cost(spec, u, setup.solver_opts)
        res = stationarity_residual(spec, u, 1.0, setup.solver_opts)
        lines += [
            f"iterations: {trace.iterations}",
            f"converged: {trace.converged}",
            f"final J: {_fmt(cost.J_value)}",
            f"final F: {_fmt(cost.F_value)}",
            f"final residual: {_fmt(trace.residual[-1] if trace.residual else 0.0)}",
            f"stationarity residual (s=1): {_fmt(res)}",
        ]
        if dump:
            y = solve_state(spec, u, setup.solver_opts)
            write_field_csv(out / "u.csv", u)
            write_field_csv(out / "y.csv", y)
            write_field_csv(out / "phi.csv", solve_adjoint(spec, y, setup.solver_opts))
        code = EXIT_OK if trace.converged else EXIT_COUNTEREXAMPLE
        lines.append("verdict: " + ("PASS" if code == EXIT_OK else "FAIL (not converged)"))
        return code, lines

    ubar = setup.candidate()
    if setup.trace is not None:
        setup.trace.write_csv(out / "trace.csv")
        lines.append(f"candidate: proximal gradient, {setup.trace.iterations} iterations, converged={setup.trace.converged}")
    point = cond.ReferencePoint(spec, ubar, setup.phibar, opts=setup.solver_opts)
    res = stationarity_residual(spec, ubar, 1.0, setup.solver_opts)
    lines += [f"J(u_bar): {_fmt(point.J)}", f"stationarity residual (s=1): {_fmt(res)}"]
    if dump:
        write_field_csv(out / "u_bar.csv", ubar)
        write_field_csv(out / "y_bar.csv", point.ybar)
        write_field_csv(out / "phi_bar.csv", point.phibar)

    if mode == "verify-foc":
        tol = float(cfg.get("foc_tol", 1e-6))
        cl = cond.classify(ubar, point.phibar, spec.mu, spec.alpha, spec.beta)
        lam = cond.multiplier_lambda(point.phibar, spec.mu) if spec.mu > 0 else None
        lam_bad = 0
        if lam is not None:
            lv, uv = lam.values, ubar.values
            nz = np.abs(uv) > cond.TOL_ACTIVE
            lam_bad = int(np.count_nonzero(np.abs(lv) > 1 + 1e-8) + np.count_nonzero(nz & (np.abs(lv - np.sign(uv)) > 1e-8)))
        idx = spec.grid.node_indices()
        rows = []
        for k in range(spec.grid.n_t):
            for i in range(spec.grid.n_space):
                rows.append((k + 1, *idx[i].tolist(), cond.PointLabel(cl.labels[k, i]).name, ubar.values[k, i],
                             point.phibar.values[k, i], lam.values[k, i] if lam is not None else float("nan"),
                             int(cl.violation_mask[k, i])))
        axes = [f"i{j}" for j in range(spec.grid.d)]
        cond._write_rows(out / "report.csv", ["k", *axes, "label", "u_bar", "phi_bar", "lambda", "violation"], rows)
        lines += [f"band half-width: {_fmt(cl.eps_b)}"]
        lines += [f"count {k}: {v}" for k, v in cl.counts.items()]
        lines += [f"classification violations: {cl.violations}", f"multiplier violations: {lam_bad}"]
        ok = cl.violations == 0 and lam_bad == 0 and res <= tol
        lines.append(f"residual tolerance: {_fmt(tol)}")
        code = EXIT_OK if ok else EXIT_COUNTEREXAMPLE
        if dump:
            write_field_csv(out / "labels.csv", cl.label_field(spec.grid))

    elif mode == "verify-soc":
        rows = []
        all_ok = True
        for tau in _taus(cfg):
            rep = cond.ssc_report(point, None, cond.ConeQuery("Ctau", tau), n, setup.seed, workers)
            rows += rep.rows()
            if rep.vacuous:
                lines.append(f"tau={tau!r}: cone sampled empty (vacuous condition)")
                continue
            lines.append(f"tau={tau!r}: samples={rep.samples} min_ratio={_fmt(rep.min_ratio)} "
                         f"argmin={rep.argmin} acceptance={_fmt(rep.acceptance_rate)}")
            if rep.violating_direction is not None:
                all_ok = False
                path = out / f"violating_direction_tau{tau!r}.csv"
                write_field_csv(path, rep.violating_direction)
                lines.append(f"  negative curvature certificate saved to {path.name}")
        cond._write_rows(out / "report.csv", ["id", "tau", "margin_sign", "margin_structure", "margin_dJ", "ratio"], rows)
        code = EXIT_OK if all_ok else EXIT_COUNTEREXAMPLE

    elif mode == "growth":
        eps = float(cfg.get("eps", 1.0))
        rho = cfg.get("rho_grid", [0.01, 0.03, 0.1, 0.3])
        rep = cond.growth_report(point, None, eps, n, setup.seed, rho, workers)
        rep.write_csv(out / "report.csv")
        lines += [f"eps: {_fmt(eps)}", f"samples: {rep.samples}", f"min_kappa: {_fmt(rep.min_kappa)}",
                  f"counterexamples: {len(rep.counterexamples)}"]
        for j, u in enumerate(rep.counterexamples):
            write_field_csv(out / f"counterexample_{j}.csv", u)
        code = EXIT_OK if rep.passed else EXIT_COUNTEREXAMPLE

    elif mode == "bounds":
        rep = cond.bounds_report(point, None, n, setup.seed, workers, cfg.get("rho_grid"))
        rep.write_csv(out / "report.csv")
        lines += [f"constant {k}: {_fmt(v)} (stabilized={rep.stabilized.get(k, '-')})" for k, v in rep.constants.items()]
        lines += [f"premise threshold {k}: {_fmt(v)}; checked {rep.checked[k]}; violations {rep.violations[k]}"
                  for k, v in rep.premise.items()]
        lines += [f"duality max relative error: {_fmt(rep.duality_max_error)}",
                  f"terminal L1 bound failures: {rep.l1_bound_failures}",
                  f"empirical Lipschitz constant: {_fmt(rep.lipschitz)}"]
        code = EXIT_OK if rep.passed else EXIT_COUNTEREXAMPLE

    elif mode == "cones":
        rows = []
        all_ok = True
        for tau in _taus(cfg):
            sv = cond.cone_survey(point, None, tau, n, setup.seed, workers)
            rows += sv.rows
            all_ok &= sv.passed
            lines.append(f"tau={tau!r}: tau'={_fmt(sv.tau_prime)} members={sv.members} exceptions={sv.exceptions}")
        kinds = list(cond.CONE_KINDS) + ["Gtau_prime"]
        cond._write_rows(out / "report.csv", ["id", "tau", "draw", "scale", *(f"member_{k}" for k in kinds), "margin_dJ_Ctau"], rows)
        code = EXIT_OK if all_ok else EXIT_COUNTEREXAMPLE

    lines.append("verdict: " + ("PASS" if code == EXIT_OK else "FAIL (counterexample found)"))
    return code, lines


def load_config(path: Path) -> dict:
    """Parse and validate a configuration file; raises :class:`ConfigError` with the location."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for err in errors:
            loc = ".".join(str(p) for p in err.absolute_path) or "<root>"
            msgs.append(f"field {loc}: {err.message}")
        raise ConfigError(f"{path}: " + "; ".join(msgs))
    return cfg


def run(config_path, out=None, workers: int = 1, dump_fields: bool = False) -> int:
    """Run one configuration; returns the exit code."""
    config_path = Path(config_path)
    out = Path(out) if out is not None else Path.cwd()
    try:
        cfg = load_config(config_path)
        out.mkdir(parents=True, exist_ok=True)
        setup = Setup(cfg, config_path.parent)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyConeWarning)
            code, lines = run_pipeline(setup, out, max(1, int(workers)), dump_fields or cfg.get("dump_fields", False))
    except Exception as exc:  # noqa: BLE001 - the exit code carries the failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="parabolic-ssc", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("--workers", type=int, default=1, help="worker threads for sampling pipelines")
    parser.add_argument("--dump-fields", action="store_true", help="write u, y, phi and labels as field CSVs")
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    return run(args.config, args.out, args.workers, args.dump_fields)


def schema_json() -> str:
    """The configuration schema as a JSON string."""
    return json.dumps(CONFIG_SCHEMA, indent=2)


if __name__ == "__main__":
    sys.exit(main())
