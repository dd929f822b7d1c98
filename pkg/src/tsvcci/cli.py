"""
Command line interface: ``tsvcci fit | ci | simulate``.

Every option may also come from a flat JSON document passed with
``--config``; explicit flags win over the file, the file wins over the
built-in defaults. Exit status is 0 on success, 1 on usage or configuration
errors and 2 on runtime failures. Output files are written only after the
whole command succeeded.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from .data import DataError, SurvivalSchema, dataset_from_frame, expand_discrete_hazard, read_table
from .glm import Family
from .inference import (
    Method,
    calibrated_cis,
    calibration_bootstrap,
    parametric_bootstrap,
    percentile_cis,
    wald_ci,
)
from .serialize import (
    SchemaError,
    ci_table,
    deserialize_model,
    render_tree,
    report_document,
    report_frame,
    serialize_model,
)
from .simulation import Scenario, ScenarioSpec, run_study
from .tsvc import TsvcConfig, fit_structure, fit_tsvc

__all__ = ["main", "build_parser", "UsageError"]

CSV_FLOAT = "%.6g"

_DEFAULTS = {
    "common": {"seed": 0, "n_jobs": 1},
    "model": {
        "outcome": "y", "covariates": None, "family": "gaussian", "max_splits": 5,
        "min_node_size": 5, "vary": None, "modifiers": None, "fixed": None,
        "modifier_only": None, "survival_time": None, "event": None,
    },
    "fit": {"output": "model.json", "tree_output": None},
    "ci": {"model": None, "method": ["parametric_percentile"], "level": [0.95], "B": 1000,
           "output": "ci.csv", "json_output": None},
    "simulate": {"scenario": ["linear"], "n": [200], "sigma": [1.0], "R": 100, "B": 200,
                 "method": ["wald", "parametric_percentile"], "level": [0.95],
                 "max_splits": 5, "min_node_size": 5,
                 "output": "coverage.csv", "json_output": None},
}
_LISTS = {"covariates", "vary", "fixed", "modifier_only", "method", "level", "scenario", "n",
          "sigma"}


class UsageError(Exception):
    """Bad arguments or configuration (exit status 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _split_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _add_common(p):
    p.add_argument("--config", help="flat JSON document of option values")
    p.add_argument("--seed", type=int, help="master random seed (default 0)")
    p.add_argument("--n-jobs", dest="n_jobs", type=int, help="worker processes (default 1)")


def _add_model_options(p):
    p.add_argument("--data", help="input CSV")
    p.add_argument("--outcome", help="outcome column (default y)")
    p.add_argument("--covariates", type=_split_list, help="comma-separated covariate columns")
    p.add_argument("--family", choices=["gaussian", "binomial"])
    p.add_argument("--max-splits", dest="max_splits", type=int)
    p.add_argument("--min-node-size", dest="min_node_size", type=int)
    p.add_argument("--vary", type=_split_list, help="covariates whose effect may vary")
    p.add_argument("--modifiers", action="append",
                   help="allowed modifiers of one covariate, e.g. X1=X2,X3 (repeatable)")
    p.add_argument("--fixed", type=_split_list, help="covariates with a constant effect")
    p.add_argument("--modifier-only", dest="modifier_only", type=_split_list,
                   help="covariates used only as effect modifiers")
    p.add_argument("--survival-time", dest="survival_time",
                   help="discrete event time column; expands to person-period rows")
    p.add_argument("--event", help="event indicator column (1 = event, 0 = censored)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsvcci",
                     description="Tree-structured varying coefficient models with "
                                 "selection-aware confidence intervals.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="fit a TSVC model and save it")
    _add_common(fit)
    _add_model_options(fit)
    fit.add_argument("--output", "-o", help="model JSON document (default model.json)")
    fit.add_argument("--tree-output", dest="tree_output",
                     help="text rendering of the trees (default: <output>.txt)")

    ci = sub.add_parser("ci", help="confidence intervals for the partition coefficients")
    _add_common(ci)
    _add_model_options(ci)
    ci.add_argument("--model", help="saved model document; fitted afresh when omitted")
    ci.add_argument("--method", action="append", choices=[m.value for m in Method],
                    help="CI method (repeatable; default parametric_percentile)")
    ci.add_argument("--level", action="append", type=float, help="confidence level (repeatable)")
    ci.add_argument("--B", type=int, help="bootstrap replicates (default 1000)")
    ci.add_argument("--output", "-o", help="CI table CSV (default ci.csv)")
    ci.add_argument("--json-output", dest="json_output", help="CI table JSON (default: <output>.json)")

    sim = sub.add_parser("simulate", help="run a coverage study")
    _add_common(sim)
    sim.add_argument("--scenario", action="append", choices=[s.value for s in Scenario])
    sim.add_argument("--n", action="append", type=int, help="sample size (repeatable)")
    sim.add_argument("--sigma", action="append", type=float, help="noise SD (repeatable)")
    sim.add_argument("--R", type=int, help="replications per cell (default 100)")
    sim.add_argument("--B", type=int, help="bootstrap replicates (default 200)")
    sim.add_argument("--method", action="append", choices=[m.value for m in Method])
    sim.add_argument("--level", action="append", type=float)
    sim.add_argument("--max-splits", dest="max_splits", type=int)
    sim.add_argument("--min-node-size", dest="min_node_size", type=int)
    sim.add_argument("--output", "-o", help="coverage report CSV (default coverage.csv)")
    sim.add_argument("--json-output", dest="json_output",
                     help="coverage report JSON (default: <output>.json)")
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` document and explicit flags."""
    command = args.command
    opts = dict(_DEFAULTS["common"])
    if command in ("fit", "ci"):
        opts.update(_DEFAULTS["model"])
    opts.update(_DEFAULTS[command])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        doc.pop("command", None)
        unknown = sorted(set(doc) - set(opts) - {"data"})
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in doc.items():
            if key in _LISTS and value is not None and not isinstance(value, list):
                value = _split_list(value) if isinstance(value, str) else [value]
            opts[key] = value
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        opts[key] = value
    opts["command"] = command
    return opts


def _parse_modifiers(value):
    if value is None:
        return None
    if isinstance(value, dict):
        return {k: list(v) if isinstance(v, list) else _split_list(v) for k, v in value.items()}
    out = {}
    for item in value:
        target, sep, mods = str(item).partition("=")
        if not sep or not target.strip():
            raise UsageError(f"--modifiers expects TARGET=MOD1,MOD2, got {item!r}")
        out[target.strip()] = _split_list(mods)
    return out


def _check_levels(levels, B=None, methods=()):
    for level in levels:
        if not 0 < float(level) < 1:
            raise UsageError(f"level must lie in (0, 1), got {level}")
        need = math.ceil(2.0 / (1.0 - float(level)) - 1e-9)
        if Method.PERCENTILE in methods and B is not None and B < need:
            raise UsageError(f"B={B} is too small for percentile intervals at level {level}; "
                             f"need B >= {need}")


def load_data(opts):
    """Dataset and an unresolved TsvcConfig for the ``fit`` and ``ci`` commands."""
    if not opts.get("data"):
        raise UsageError("--data is required")
    table = read_table(opts["data"])
    family = Family.parse(opts["family"])
    vary, fixed, mod_only = opts["vary"], opts["fixed"], opts["modifier_only"]
    modifiers = _parse_modifiers(opts["modifiers"])
    if opts["survival_time"] or opts["event"]:
        if not (opts["survival_time"] and opts["event"]):
            raise UsageError("--survival-time and --event must be given together")
        schema = SurvivalSchema(opts["survival_time"], opts["event"],
                                tuple(opts["covariates"]) if opts["covariates"] else None)
        dataset, info = expand_discrete_hazard(table, schema)
        family = Family.BINOMIAL
        t = info["time_column"]
        subject_cols = info["covariate_columns"]
        # period dummies carry the baseline hazard; t modifies the covariate effects
        fixed = info["indicator_columns"] if fixed is None else fixed
        mod_only = [t] if mod_only is None else mod_only
        if vary is None:
            vary = [c for c in subject_cols if c not in fixed and c not in mod_only]
        if modifiers is None:
            modifiers = {c: [t] for c in vary}
    else:
        dataset = dataset_from_frame(table, opts["outcome"], opts["covariates"])
    config = TsvcConfig(max_splits=int(opts["max_splits"]), min_node_size=int(opts["min_node_size"]),
                        family=family, vary=vary, modifiers=modifiers, fixed=fixed or (),
                        modifier_only=mod_only or ())
    try:
        dataset.check_family(family)
        config = config.resolve(dataset)
    except (KeyError, IndexError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return dataset, config


def _write_all(files: dict):
    """Write every ``path -> text`` pair, or none of them."""
    staged = []
    try:
        for path, text in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
            staged.append((tmp, path))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _sibling(path, suffix):
    return str(Path(path).with_suffix(suffix))


def cmd_fit(opts):
    dataset, config = load_data(opts)
    model = fit_tsvc(dataset, config)
    doc = serialize_model(model)
    doc["seed"] = opts["seed"]
    tree_path = opts["tree_output"] or _sibling(opts["output"], ".txt")
    rendering = render_tree(model)
    _write_all({opts["output"]: json.dumps(doc, indent=2) + "\n", tree_path: rendering + "\n"})
    print(rendering)
    print(f"splits: {model.splits_performed}  BIC: {model.bic:.6g}")
    print(f"wrote {opts['output']} and {tree_path}")


def cmd_ci(opts):
    methods = [Method(m) for m in opts["method"]]
    levels = [float(v) for v in opts["level"]]
    B = int(opts["B"])
    if B < 1:
        raise UsageError("B must be >= 1")
    _check_levels(levels, B, methods)
    dataset, config = load_data(opts)
    if opts["model"]:
        with open(opts["model"], encoding="utf-8") as fh:
            saved = deserialize_model(json.load(fh))
        if saved.names != dataset.names:
            raise UsageError(f"model covariates {list(saved.names)} do not match data "
                             f"{list(dataset.names)}")
        config = saved.config
        # refit the saved structure to recover the training linear predictor
        model = fit_structure(dataset, saved.structure, config)
    else:
        model = fit_tsvc(dataset, config)
    seed, n_jobs = opts["seed"], int(opts["n_jobs"])
    cis = []
    if Method.WALD in methods:
        for level in levels:
            cis += wald_ci(model, level)
    if Method.PERCENTILE in methods:
        run = parametric_bootstrap(model, dataset, B, seed, config, n_jobs)
        for level in levels:
            cis += percentile_cis(model, run, level)
    if Method.CALIBRATED in methods:
        run = calibration_bootstrap(model, dataset, B, seed, config, n_jobs)
        for level in levels:
            cis += calibrated_cis(model, run, level)
    table = ci_table(model, cis)
    json_path = opts["json_output"] or _sibling(opts["output"], ".json")
    doc = {"schema_version": "tsvcci.ci/1", "seed": seed, "B": B,
           "intervals": table.to_dict(orient="records")}
    _write_all({opts["output"]: table.to_csv(index=False, float_format=CSV_FLOAT),
                json_path: json.dumps(doc, indent=2) + "\n"})
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4g}"))
    print(f"wrote {opts['output']} and {json_path}")


def cmd_simulate(opts):
    levels = [float(v) for v in opts["level"]]
    methods = [Method(m) for m in opts["method"]]
    R, B = int(opts["R"]), int(opts["B"])
    if R < 1 or B < 1:
        raise UsageError("R and B must be >= 1")
    _check_levels(levels, B, methods)
    try:
        specs = [ScenarioSpec(Scenario(s), int(n), float(sigma),
                              max_splits=int(opts["max_splits"]),
                              min_node_size=int(opts["min_node_size"]))
                 for s in opts["scenario"] for n in opts["n"] for sigma in opts["sigma"]]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    reports = run_study(specs, R, methods, B, levels, opts["seed"], int(opts["n_jobs"]))
    frame = report_frame(reports)
    json_path = opts["json_output"] or _sibling(opts["output"], ".json")
    doc = report_document(reports, opts["seed"])
    _write_all({opts["output"]: frame.to_csv(index=False, float_format=CSV_FLOAT),
                json_path: json.dumps(doc, indent=2) + "\n"})
    for rep in reports:
        print(rep.spec.label(), f"R={rep.replications}",
              " ".join(f"{m.value}@{lvl:g}: C_av={v['C_av']:.3f}" for (m, lvl), v in rep.coverage.items()),
              f"splits={rep.splits['total']:.3f}")
    print(f"wrote {opts['output']} and {json_path}")


_COMMANDS = {"fit": cmd_fit, "ci": cmd_ci, "simulate": cmd_simulate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        opts = resolve_options(args)
        print(f"seed: {opts['seed']}")
        _COMMANDS[opts["command"]](opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (DataError, SchemaError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
