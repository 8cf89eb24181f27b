"""Experiment harness: run solver configurations over seeds, log one CSV row
per iteration, and aggregate per-iteration quartiles across runs.

Configs are plain JSON documents.  Per-run CSVs have a fixed, documented
column order with floats serialized to 17 significant digits so they
round-trip exactly; reruns with the same config and seed are bit-identical,
also when seeds execute in parallel worker processes.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines, problems, tr
from .core import ConfigurationError, make_rng

OUTPUT_ROOT_ENV = "DDTR_OUTPUT_ROOT"
PROBLEMS = ("synthetic", "dro")
SOLVERS = ("tr", "asgda", "spd-constant", "spd-dynamic")

TR_COLUMNS = [
    "k", "delta", "delta_next", "rho", "grad_norm_surrogate", "v_k", "v_k_half",
    "accepted", "descent_lhs", "descent_rhs", "descent_ok", "n_llr", "n_value",
    "n_value_half", "b1_frobenius", "oracle_phi", "oracle_grad_norm",
    "oracle_samples", "x_before", "x_after",
]
BASELINE_COLUMNS = [
    "k", "stepsize", "grad_norm_est", "diverged", "oracle_phi",
    "oracle_grad_norm", "oracle_samples", "x_after",
]

_SYNTHETIC_KEYS = {"noise_sigma", "half_width", "x0_center", "x0_radius"}
_DRO_KEYS = {
    "csv_path", "label_column", "feature_columns", "n_rows", "n_features",
    "data_seed", "shift_scale", "lambda1", "lambda2", "alpha", "noise_sigma",
    "diag_samples", "x0_center", "x0_radius",
}
_TOP_KEYS = {
    "problem", "solver", "seeds", "output_dir", "max_iters",
    "log_oracle_diagnostics", "problem_params", "solver_params",
}


@dataclass(frozen=True)
class RunConfig:
    problem: str
    solver: str
    seeds: list[int]
    output_dir: str
    max_iters: int
    log_oracle_diagnostics: bool
    problem_params: dict
    solver_params: dict


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a config document, reporting every offending key at once."""
    errors = []
    for key in sorted(set(doc) - _TOP_KEYS):
        errors.append(f"unknown key {key!r}")
    problem = doc.get("problem")
    if problem not in PROBLEMS:
        errors.append(f"'problem' must be one of {PROBLEMS}, got {problem!r}")
    solver = doc.get("solver")
    if solver not in SOLVERS:
        errors.append(f"'solver' must be one of {SOLVERS}, got {solver!r}")
    seeds = doc.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        errors.append("'seeds' must be a nonempty list of integers")
    pparams = doc.get("problem_params", {})
    allowed = _SYNTHETIC_KEYS if problem == "synthetic" else _DRO_KEYS
    if problem in PROBLEMS:
        for key in sorted(set(pparams) - allowed):
            errors.append(f"unknown problem_params key {key!r}")
    sparams = doc.get("solver_params", {})
    if solver == "tr":
        allowed = {f.name for f in fields(tr.TRConfig)} - {"seed", "max_iters"}
        allowed |= {"llr_count", "value_count", "llr_schedule", "value_schedule"}
    elif solver in SOLVERS:
        allowed = {f.name for f in fields(baselines.BaselineConfig)} - {"seed", "max_iters", "method"}
    if solver in SOLVERS:
        for key in sorted(set(sparams) - allowed):
            errors.append(f"unknown solver_params key {key!r}")
    if errors:
        raise ConfigurationError("invalid config: " + "; ".join(errors))
    return RunConfig(
        problem=problem,
        solver=solver,
        seeds=list(seeds),
        output_dir=str(doc.get("output_dir", "runs")),
        max_iters=int(doc.get("max_iters", 300)),
        log_oracle_diagnostics=bool(doc.get("log_oracle_diagnostics", True)),
        problem_params=dict(pparams),
        solver_params=dict(sparams),
    )


def _resolve_output_dir(output_dir: str) -> Path:
    path = Path(output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def build_instance(config: RunConfig) -> problems.Instance:
    params = dict(config.problem_params)
    x0_center = params.pop("x0_center", None)
    x0_radius = params.pop("x0_radius", None)
    if config.problem == "synthetic":
        instance = problems.synthetic_instance(problems.SyntheticProblem(**params))
    else:
        diag_samples = params.pop("diag_samples", 5000)
        csv_path = params.pop("csv_path", None)
        n_rows = params.pop("n_rows", 200)
        n_features = params.pop("n_features", 5)
        data_seed = params.pop("data_seed", 0)
        problem_kwargs = {
            key: params[key]
            for key in ("shift_scale", "lambda1", "lambda2", "alpha", "noise_sigma")
            if key in params
        }
        if csv_path is not None:
            loader_kwargs = {}
            if "label_column" in params:
                loader_kwargs["label_column"] = params["label_column"]
            if "feature_columns" in params:
                loader_kwargs["feature_columns"] = params["feature_columns"]
            dro = problems.load_credit_csv(csv_path, **loader_kwargs, **problem_kwargs)
            if n_rows < dro.n_rows:
                dro = problems.subsample(dro, n_rows, data_seed)
        else:
            dro = problems.generate_synthetic_credit(
                n_rows, n_features, data_seed, **problem_kwargs
            )
        instance = problems.dro_instance(dro, diag_samples=diag_samples)
    if x0_center is not None:
        center = np.atleast_1d(np.asarray(x0_center, dtype=float))
        instance = problems.Instance(
            problem=instance.problem,
            oracle=instance.oracle,
            diagnostics=instance.diagnostics,
            x0_center=center,
            x0_radius=float(x0_radius if x0_radius is not None else instance.x0_radius),
            y0_center=instance.y0_center,
        )
    elif x0_radius is not None:
        instance = problems.Instance(
            problem=instance.problem,
            oracle=instance.oracle,
            diagnostics=instance.diagnostics,
            x0_center=instance.x0_center,
            x0_radius=float(x0_radius),
            y0_center=instance.y0_center,
        )
    return instance


def build_tr_config(config: RunConfig, seed: int) -> tr.TRConfig:
    params = dict(config.solver_params)
    if "llr_count" in params:
        params["llr_schedule"] = tr.SampleSchedule(fixed=int(params.pop("llr_count")))
    elif "llr_schedule" in params:
        params["llr_schedule"] = tr.SampleSchedule(fixed=None, **params["llr_schedule"])
    if "value_count" in params:
        params["value_schedule"] = tr.SampleSchedule(fixed=int(params.pop("value_count")))
    elif "value_schedule" in params:
        params["value_schedule"] = tr.SampleSchedule(fixed=None, **params["value_schedule"])
    return tr.TRConfig(max_iters=config.max_iters, seed=seed, **params)


def build_baseline_config(config: RunConfig, seed: int) -> baselines.BaselineConfig:
    return baselines.BaselineConfig(
        method=config.solver, max_iters=config.max_iters, seed=seed, **config.solver_params
    )


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, np.ndarray):
        return ";".join(f"{float(v):.17g}" for v in value)
    return str(value)


def _write_csv(path: Path, columns: list[str], records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, col)) for col in columns])


def run_one(config: RunConfig, seed: int, out_dir: str) -> dict:
    """Execute a single seeded run and write its CSV; returns a summary entry."""
    instance = build_instance(config)
    diagnostics = instance.diagnostics if config.log_oracle_diagnostics else None
    start_rng = make_rng(seed)
    x0, y0 = instance.draw_start(start_rng)
    csv_path = Path(out_dir) / f"{config.problem}_{config.solver}_seed{seed}.csv"
    t0 = time.perf_counter()
    entry = {"seed": seed, "csv": csv_path.name, "x0": [float(v) for v in x0]}
    if config.solver == "tr":
        state, history = tr.solve(
            x0, instance.problem, instance.oracle, build_tr_config(config, seed), diagnostics
        )
        _write_csv(csv_path, TR_COLUMNS, history)
        entry.update(
            final_x=[float(v) for v in state.x],
            final_delta=state.delta,
            iterations=len(history),
            final_grad_norm_surrogate=history[-1].grad_norm_surrogate if history else math.nan,
            diverged=False,
        )
    else:
        state, history = baselines.run_baseline(
            x0, y0, instance.problem, instance.oracle,
            build_baseline_config(config, seed), diagnostics,
        )
        _write_csv(csv_path, BASELINE_COLUMNS, history)
        entry.update(
            final_x=[float(v) for v in state.x],
            iterations=len(history),
            final_grad_norm_est=history[-1].grad_norm_est if history else math.nan,
            diverged=bool(state.diverged),
        )
    if instance.diagnostics is not None and not entry["diverged"]:
        diag_rng = make_rng(seed).spawn(3)[2]
        final_x = np.asarray(entry["final_x"])
        phi, grad_norm = instance.diagnostics.evaluate(final_x, diag_rng)
        entry["final_oracle_phi"] = phi
        entry["final_oracle_grad_norm"] = grad_norm
        entry["oracle_samples"] = instance.diagnostics.sample_count
    entry["wall_time_s"] = time.perf_counter() - t0
    return entry


def _run_one_tuple(args) -> dict:
    config_doc, seed, out_dir = args
    return run_one(parse_run_config(config_doc), seed, out_dir)


def run(config: RunConfig, workers: int = 1) -> int:
    """Execute one run per seed; returns a process exit status."""
    out_dir = _resolve_output_dir(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_doc = {
        "problem": config.problem,
        "solver": config.solver,
        "seeds": config.seeds,
        "output_dir": config.output_dir,
        "max_iters": config.max_iters,
        "log_oracle_diagnostics": config.log_oracle_diagnostics,
        "problem_params": config.problem_params,
        "solver_params": config.solver_params,
    }
    entries = []
    jobs = [(config_doc, seed, str(out_dir)) for seed in config.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one_tuple, job) for job in jobs]
            for (_, seed, _), future in zip(jobs, futures):
                try:
                    entries.append(future.result())
                except Exception as exc:  # record and keep sibling seeds running
                    entries.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    else:
        for job in jobs:
            _, seed, _ = job
            try:
                entries.append(_run_one_tuple(job))
            except Exception as exc:  # record and keep sibling seeds running
                entries.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    summary = {"config": config_doc, "runs": entries}
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return 1 if any("error" in e for e in entries) else 0


_METRIC_PREFERENCE = ("oracle_grad_norm", "grad_norm_surrogate", "grad_norm_est")


class SchemaError(ValueError):
    pass


def _load_metric_rows(path: Path, metric: Optional[str]) -> tuple[str, dict[int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty CSV")
        if "k" not in reader.fieldnames:
            raise SchemaError(f"{path}: missing column 'k'")
        if metric is None:
            for candidate in _METRIC_PREFERENCE:
                if candidate in reader.fieldnames:
                    metric = candidate
                    break
            else:
                raise SchemaError(f"{path}: no known metric column in {reader.fieldnames}")
        elif metric not in reader.fieldnames:
            raise SchemaError(f"{path}: missing column {metric!r}")
        rows = {}
        for row in reader:
            rows[int(row["k"])] = float(row[metric])
        return metric, rows


def summarize(run_dirs: list[str], metric: Optional[str] = None, output=None) -> None:
    """Aggregate per-iteration median and quartiles of a metric across the
    run CSVs found in each directory."""
    out = output if output is not None else sys.stdout
    writer = csv.writer(out)
    writer.writerow(["dir", "metric", "k", "n_runs", "q25", "median", "q75"])
    for run_dir in run_dirs:
        directory = Path(run_dir)
        paths = sorted(p for p in directory.glob("*.csv") if p.name != "aggregate.csv")
        if not paths:
            raise SchemaError(f"{directory}: no run CSVs found")
        chosen = metric
        per_run = []
        for path in paths:
            chosen_here, rows = _load_metric_rows(path, chosen)
            if chosen is None:
                chosen = chosen_here
            per_run.append(rows)
        all_k = sorted(set().union(*(rows.keys() for rows in per_run)))
        for k in all_k:
            values = [rows[k] for rows in per_run if k in rows]
            finite = [v for v in values if math.isfinite(v)]
            if not finite:
                continue
            q25, med, q75 = np.percentile(finite, [25, 50, 75])
            writer.writerow(
                [str(directory), chosen, k, len(finite), _fmt(q25), _fmt(med), _fmt(q75)]
            )


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ddtr", description="Trust-region minimax experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a JSON run configuration")
    p_run.add_argument("config", help="path to a JSON config file")
    p_run.add_argument("--seed-override", help="comma-separated seeds replacing the config's")
    p_run.add_argument("--max-iters", type=int, help="override iteration budget")
    p_run.add_argument("--output-dir", help="override output directory")
    p_run.add_argument("--workers", type=int, default=1, help="parallel seed workers")

    p_sum = sub.add_parser("summarize", help="aggregate per-iteration quartiles")
    p_sum.add_argument("dirs", nargs="+", help="run directories")
    p_sum.add_argument("--metric", help="metric column (default: auto-detect)")
    p_sum.add_argument("--output", help="write the aggregate CSV here instead of stdout")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
            if args.seed_override:
                doc["seeds"] = [int(s) for s in args.seed_override.split(",")]
            if args.max_iters is not None:
                doc["max_iters"] = args.max_iters
            if args.output_dir is not None:
                doc["output_dir"] = args.output_dir
            config = parse_run_config(doc)
            return run(config, workers=max(1, args.workers))
        if args.command == "summarize":
            if args.output:
                with open(args.output, "w", newline="", encoding="utf-8") as fh:
                    summarize(args.dirs, metric=args.metric, output=fh)
            else:
                summarize(args.dirs, metric=args.metric)
            return 0
    except (ConfigurationError, SchemaError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
