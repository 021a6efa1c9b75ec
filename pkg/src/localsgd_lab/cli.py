"""Command-line front end.

Three subcommands:

  run       execute a JSON experiment config, write CSV results
  schedule  build and inspect one communication schedule
  plotdata  turn result CSVs into whitespace .dat files for gnuplot

Exit codes: 0 ok, 2 invalid input (JSON, schema, or parameter), 3 theorem
precondition refusal. Runs are deterministic: the same config produces
byte-identical CSVs regardless of LOCALSGD_THREADS.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .harness import (
    ExperimentSpec,
    PreconditionError,
    RRule,
    StrategyCell,
    run_bounds_experiment,
    run_rounds_to_target,
    run_speedup_experiment,
    run_strategy_compare,
)
from .objectives import problem_from_spec
from .schedules import (
    Schedule,
    check_thm1_condition,
    check_thm2_condition,
    cubic_sum,
    decreasing_power_schedule,
    fixed_schedule,
    increasing_power_schedule,
    schedule_from_spec,
    weighted_cubic_sum,
)

_NUM = {"type": "number"}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

_CELL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["label", "kind"],
    "properties": {
        "label": {"type": "string", "pattern": "^[A-Za-z0-9_-]+$"},
        "kind": {"enum": ["fixed", "fixed-width", "increasing-power",
                          "increasing-rounds", "decreasing-rounds", "explicit"]},
        "a": _POS_NUM,
        "s": _NUM,
        "p": _NUM,
        "H": _POS_INT,
        "R": _POS_INT,
        "r_rule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["coef", "T_exp", "n_exp"],
            "properties": {"coef": _POS_NUM, "T_exp": _NUM, "n_exp": _NUM},
        },
        "explicit_H": {"type": "array", "items": _POS_INT, "minItems": 1},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "problem", "seeds"],
    "properties": {
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["bounds", "rounds-to-target", "speedup",
                                  "strategy-compare"]},
                "theorem": {"enum": [1, 2, 3]},
                "T": _POS_INT,
                "t_max": _POS_INT,
                "threshold": _POS_NUM,
                "threshold_auto_factor": _POS_NUM,
                "measure": {"enum": ["r", "e", "h"]},
                "n_list": {"type": "array", "items": _POS_INT, "minItems": 1},
                "record_stride": _POS_INT,
                "cells": {"type": "array", "items": _CELL_SCHEMA, "minItems": 1},
            },
        },
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "n", "d", "seed"],
            "properties": {
                "family": {"enum": ["strongly-convex-quadratic", "convex-quadratic",
                                    "nonconvex", "logistic"]},
                "n": _POS_INT,
                "d": _POS_INT,
                "seed": {"type": "integer", "minimum": 0},
                "mu": _POS_NUM,
                "L": _POS_NUM,
                "delta": {"type": "number", "minimum": 0},
                "sigma_noise": {"type": "number", "minimum": 0},
                "eps_pd": _POS_NUM,
                "Q_diag": {"type": "array", "items": _NUM, "minItems": 1},
                "eps_sin": {"type": "number", "minimum": 0},
                "K": _POS_INT,
                "m": _POS_INT,
                "shards_per_agent": _POS_INT,
                "lam": _POS_NUM,
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["strategy"],
            "properties": {
                "strategy": {"enum": ["fixed", "increasing-power",
                                      "decreasing-power", "explicit"]},
                "T": _POS_INT,
                "R": _POS_INT,
                "a": _POS_NUM,
                "s": _NUM,
                "p": _NUM,
                "H": {"type": "array", "items": _POS_INT, "minItems": 1},
            },
        },
        "stepsize": {
            "type": "object",
            "additionalProperties": False,
            "required": ["policy"],
            "properties": {
                "policy": {"enum": ["inverse-time", "constant"]},
                "beta": {"anyOf": [_POS_NUM, {"const": "auto"}]},
                "c": {"anyOf": [_POS_NUM, {"type": "array", "items": _POS_NUM,
                                           "minItems": 1}]},
            },
        },
        "seeds": {
            "anyOf": [
                {"type": "array", "items": {"type": "integer", "minimum": 0},
                 "minItems": 1},
                {"type": "object", "additionalProperties": False,
                 "required": ["count"],
                 "properties": {"count": _POS_INT,
                                "base": {"type": "integer", "minimum": 0}}},
            ],
        },
        "output": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    """Parse and schema-validate a JSON config; raises ConfigError."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation at {exc.json_path}: "
                          f"{exc.message}") from exc
    return cfg


def resolve_seeds(block, offset: int = 0) -> tuple[int, ...]:
    if isinstance(block, dict):
        base = block.get("base", 0)
        seeds = range(base, base + block["count"])
    else:
        seeds = block
    return tuple(int(s) + offset for s in seeds)


def _cell_from_config(block: dict) -> StrategyCell:
    kwargs = dict(block)
    rule = kwargs.pop("r_rule", None)
    if rule is not None:
        kwargs["r_rule"] = RRule(rule["coef"], rule["T_exp"], rule["n_exp"])
    if "explicit_H" in kwargs:
        kwargs["explicit_H"] = tuple(kwargs["explicit_H"])
    return StrategyCell(**kwargs)


def spec_from_config(cfg: dict, seed_offset: int = 0) -> ExperimentSpec:
    exp = cfg["experiment"]
    step = cfg.get("stepsize", {})
    c = step.get("c")
    if isinstance(c, list):
        c = tuple(c)
    return ExperimentSpec(
        kind=exp["kind"],
        problem=cfg["problem"],
        seeds=resolve_seeds(cfg["seeds"], seed_offset),
        stepsize_policy=step.get("policy", "constant"),
        beta=step.get("beta"),
        c=c,
        theorem=exp.get("theorem"),
        schedule_spec=cfg.get("schedule"),
        record_stride=exp.get("record_stride", 1),
        cells=tuple(_cell_from_config(b) for b in exp.get("cells", [])),
        n_list=tuple(exp.get("n_list", [])),
        T=exp.get("T"),
        t_max=exp.get("t_max"),
        threshold=exp.get("threshold"),
        threshold_auto_factor=exp.get("threshold_auto_factor"),
        measure=exp.get("measure", "e"),
    )


def _fmt(v) -> str:
    """CSV cell: bools as 0/1, ints bare, floats as shortest round-trip repr."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_metrics_csv(path: Path, agg):
    rows = []
    for run in agg.runs:
        for i in range(len(run.t)):
            rows.append((run.seed, int(run.t[i]), run.r[i], run.e[i],
                         run.V[i], run.h[i], bool(run.is_comm[i])))
    _write_csv(path, ["seed", "t", "r", "e", "V", "h", "is_comm_round"], rows)


def write_bounds_csv(path: Path, rep):
    rows = [(rep.theorem, f"term_{label}", term)
            for label, term in zip(rep.labels, rep.terms)]
    rows += [(rep.theorem, "total", rep.total),
             (rep.theorem, "measured", rep.measured),
             (rep.theorem, "margin", rep.margin),
             (rep.theorem, "holds", rep.holds),
             (rep.theorem, "precondition_ok", rep.precondition_ok),
             (rep.theorem, "vacuous", rep.vacuous)]
    _write_csv(path, ["theorem", "field", "value"], rows)


def write_speedup_csv(path: Path, rows):
    _write_csv(path, ["label", "n", "R", "strategy", "mean_error", "stderr",
                      "speedup", "se_speedup", "clamped"],
               [(r.label, r.n, r.R, r.strategy, r.mean_error, r.stderr,
                 r.speedup, r.se_speedup, r.clamped) for r in rows])


def write_tradeoff_csv(path: Path, rows):
    _write_csv(path, ["label", "R_used", "T_used", "reached", "threshold"],
               [(r.label, r.R_used, r.T_used, r.reached, r.threshold)
                for r in rows])


def write_convergence_csv(path: Path, by_label: dict):
    rows = []
    for label, agg in by_label.items():
        for i in range(len(agg.t)):
            rows.append((label, int(agg.t[i]), agg.mean_r[i], agg.se_r[i],
                         agg.mean_e[i], agg.se_e[i], agg.mean_V[i], agg.se_V[i],
                         agg.mean_h[i], agg.se_h[i]))
    _write_csv(path, ["label", "t", "mean_r", "se_r", "mean_e", "se_e",
                      "mean_V", "se_V", "mean_h", "se_h"], rows)


def _write_meta(outdir: Path, cfg: dict, spec: ExperimentSpec, extra: dict):
    meta = {
        "version": __version__,
        "kind": spec.kind,
        "seeds": list(spec.seeds),
        "config": cfg,
        "error_measure": {
            "with-minimizer": "squared distance of the averaged iterate, r_T",
            "nonconvex": "time-averaged squared gradient norm of the averaged iterate",
        },
        **extra,
    }
    with open(outdir / "run_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        spec = spec_from_config(cfg, args.seed_offset)
        outdir = Path(args.out or cfg.get("output") or "results")
        outdir.mkdir(parents=True, exist_ok=True)
        if spec.kind == "bounds":
            problem = problem_from_spec(cfg["problem"])
            rep, agg = run_bounds_experiment(problem, spec)
            write_metrics_csv(outdir / "metrics.csv", agg)
            write_bounds_csv(outdir / "bounds.csv", rep)
            _write_meta(outdir, cfg, spec, {
                "theorem": rep.theorem,
                "holds": rep.holds,
                "measured": rep.measured,
                "bound_total": rep.total,
            })
        elif spec.kind == "rounds-to-target":
            problem = problem_from_spec(cfg["problem"])
            rows = run_rounds_to_target(problem, spec)
            write_tradeoff_csv(outdir / "tradeoff.csv", rows)
            _write_meta(outdir, cfg, spec, {
                "threshold": rows[0].threshold,
                "measure": spec.measure,
            })
        elif spec.kind == "speedup":
            rows = run_speedup_experiment(spec)
            write_speedup_csv(outdir / "speedup.csv", rows)
            _write_meta(outdir, cfg, spec, {"notes": spec.notes})
        else:
            problem = problem_from_spec(cfg["problem"])
            by_label = run_strategy_compare(problem, spec)
            write_convergence_csv(outdir / "convergence.csv", by_label)
            for label, agg in by_label.items():
                celldir = outdir / "cells" / label
                celldir.mkdir(parents=True, exist_ok=True)
                write_metrics_csv(celldir / "metrics.csv", agg)
            _write_meta(outdir, cfg, spec, {})
    except PreconditionError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    print(f"wrote results to {outdir}")
    return 0


def _schedule_from_args(args) -> Schedule:
    if args.strategy == "fixed":
        return fixed_schedule(args.T, args.R)
    if args.strategy == "increasing":
        return increasing_power_schedule(args.a, args.s, args.T)
    if args.strategy == "decreasing":
        return decreasing_power_schedule(args.p, args.R, args.T)
    return Schedule(tuple(args.H))


def cmd_schedule(args) -> int:
    try:
        sched = _schedule_from_args(args)
    except (ValueError, TypeError) as exc:
        print(f"invalid schedule parameters: {exc}", file=sys.stderr)
        return 2
    print(f"H = {list(sched.H)}")
    print(f"R = {sched.R}")
    print(f"T = {sched.T}")
    print(f"cubic_sum = {cubic_sum(sched)}")
    if args.beta is not None:
        print(f"weighted_cubic_sum = {weighted_cubic_sum(sched, args.beta)!r}")
    if args.mu is not None and args.L is not None and args.beta is not None:
        cond = check_thm1_condition(sched, args.mu, args.L, args.beta)
        print("round  H      cap          result")
        for i, (h, cap, ok) in enumerate(zip(sched.H, cond.caps, cond.per_round)):
            print(f"{i + 1:5d}  {h:5d}  {cap:<11.6g}  {'ok' if ok else 'FAIL'}")
        print(f"thm1 all_pass = {cond.all_pass}")
    if args.L is not None and args.c is not None and args.n_agents is not None:
        cap = check_thm2_condition(sched, args.L, args.c, args.n_agents, sched.T)
        state = "ok" if cap.ok else "FAIL"
        print(f"thm2 cap = {cap.cap!r}  max H = {cap.max_H}  {state}")
    return 0


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _dat_blocks(path: Path, header: str, blocks: list[list[str]]):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {header}\n")
        for b, block in enumerate(blocks):
            if b:
                fh.write("\n\n")
            for line in block:
                fh.write(line + "\n")


def _speedup_dat(rows: list[dict], path: Path):
    order = []
    groups: dict[str, list[str]] = {}
    for row in rows:
        label = row["label"]
        if label not in groups:
            groups[label] = []
            order.append(label)
        n = int(row["n"])
        groups[label].append(
            f"{n} {row['speedup']} {row['se_speedup']} {math.sqrt(n)!r}")
    _dat_blocks(path, "n speedup stderr sqrt_n_reference",
                [groups[label] for label in order])


def _tradeoff_dat(rows: list[dict], path: Path):
    lines = [f"{r['label']} {r['R_used']} {r['T_used']}"
             for r in rows if r["reached"] == "1"]
    _dat_blocks(path, "strategy R_used T_used", [lines])


def _convergence_dat(rows: list[dict], path: Path):
    order = []
    groups: dict[str, list[str]] = {}
    for row in rows:
        label = row["label"]
        if label not in groups:
            groups[label] = []
            order.append(label)
        groups[label].append(f"{row['t']} {row['mean_r']} {row['se_r']}")
    _dat_blocks(path, "t mean_r stderr", [groups[label] for label in order])


def cmd_plotdata(args) -> int:
    rdir = Path(args.results_dir)
    converters = [("speedup.csv", "speedup.dat", _speedup_dat),
                  ("tradeoff.csv", "tradeoff.dat", _tradeoff_dat),
                  ("convergence.csv", "convergence.dat", _convergence_dat)]
    present = [(rdir / src, rdir / dst, fn) for src, dst, fn in converters
               if (rdir / src).exists()]
    if not present:
        missing = ", ".join(str(rdir / src) for src, _, _ in converters)
        print(f"no result CSVs found; looked for: {missing}", file=sys.stderr)
        return 2
    for src, dst, fn in present:
        fn(_read_csv(src), dst)
        print(f"wrote {dst}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="localsgd",
        description="Local SGD schedule laboratory: run experiments, inspect "
                    "schedules, export plot data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a JSON experiment config")
    p_run.add_argument("config", help="path to the JSON config file")
    p_run.add_argument("--out", default=None,
                       help="output directory (overrides the config's output key)")
    p_run.add_argument("--seed-offset", type=int, default=0,
                       help="shift every seed for an independent replication")
    p_run.set_defaults(func=cmd_run)

    p_sched = sub.add_parser("schedule", help="build and inspect a schedule")
    p_sched.add_argument("strategy",
                         choices=["fixed", "increasing", "decreasing", "explicit"])
    p_sched.add_argument("--T", type=int)
    p_sched.add_argument("--R", type=int)
    p_sched.add_argument("--a", type=float)
    p_sched.add_argument("--s", type=float)
    p_sched.add_argument("--p", type=float, default=2.0)
    p_sched.add_argument("--H", type=int, nargs="+",
                         help="explicit round widths")
    p_sched.add_argument("--mu", type=float)
    p_sched.add_argument("--L", type=float)
    p_sched.add_argument("--beta", type=float)
    p_sched.add_argument("--c", type=float)
    p_sched.add_argument("--n-agents", type=int)
    p_sched.set_defaults(func=cmd_schedule)

    p_plot = sub.add_parser("plotdata", help="convert result CSVs to .dat files")
    p_plot.add_argument("results_dir")
    p_plot.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
