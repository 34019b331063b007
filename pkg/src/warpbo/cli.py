"""Command-line experiment runner.

One JSON config fully reproduces an experiment: objective, method list,
budget, seeds, cost model, and any overrides of the acquisition/learning
defaults.  Each (method, seed) run writes a per-evaluation trace CSV and
the experiment writes a summary CSV of best-at-target statistics.

    warpbo run --config cfg.json [--workers N] [--out DIR]
    warpbo list-objectives
    warpbo validate --config cfg.json

Exit codes: 0 success, 1 config error, 2 partial run failures.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .acquisition import AcqConfig
from .data import METHOD_TAGS, MULTI_FIDELITY_TAGS, RunResult
from .external import external_objective
from .learn import LearnConfig
from .loop import LoopConfig, run
from .objectives import OBJECTIVE_NAMES, CostModel, ObjectiveSpec, make_objective

__all__ = ["ConfigError", "ExperimentConfig", "run_experiment", "emit_traces", "main"]

OUTPUT_DIR_ENV = "WARPBO_OUT_DIR"


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


@dataclass(frozen=True)
class ExperimentConfig:
    objective_name: str
    methods: tuple[str, ...]
    budget: float
    seeds: tuple[int, ...]
    n_init_multi: int = 10
    n_init_single: int = 6
    noise_sd: float = 0.0
    objective_seed: int = 0
    cost_model: CostModel = field(default_factory=CostModel)
    loop: LoopConfig = field(default_factory=LoopConfig)
    external_command: tuple[str, ...] | None = None
    external_timeout: float = 60.0
    external_dim: int | None = None
    output_dir: str | None = None

    def n_init_for(self, method: str) -> int:
        return self.n_init_multi if method in MULTI_FIDELITY_TAGS else self.n_init_single


def _require(doc: dict, key: str, types: tuple[type, ...]) -> Any:
    if key not in doc:
        raise ConfigError(f"missing required config key {key!r}")
    value = doc[key]
    if not isinstance(value, types):
        raise ConfigError(f"config key {key!r} has wrong type {type(value).__name__}")
    return value


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a JSON config document into an ExperimentConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    obj = _require(doc, "objective", (dict,))
    name = _require(obj, "name", (str,))
    external_command: tuple[str, ...] | None = None
    external_dim: int | None = None
    if name == "external":
        command = _require(obj, "command", (list,))
        if not command or not all(isinstance(c, str) for c in command):
            raise ConfigError("external objective 'command' must be a list of strings")
        external_command = tuple(command)
        external_dim = int(_require(obj, "design_dim", (int,)))
        if external_dim < 1:
            raise ConfigError("external objective 'design_dim' must be >= 1")
    elif name not in OBJECTIVE_NAMES:
        raise ConfigError(
            f"unknown objective {name!r}; choose from {OBJECTIVE_NAMES + ('external',)}"
        )

    methods = _require(doc, "methods", (list,))
    if not methods:
        raise ConfigError("'methods' must be a non-empty list")
    for m in methods:
        if m not in METHOD_TAGS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHOD_TAGS}")

    budget = float(_require(doc, "budget", (int, float)))
    if budget <= 0:
        raise ConfigError("'budget' must be positive")

    seeds = _require(doc, "seeds", (list,))
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("'seeds' must be a non-empty list of integers")

    cm_doc = doc.get("cost_model", {})
    try:
        cost_model = CostModel(**cm_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad cost_model: {exc}") from exc

    try:
        learn = LearnConfig(**doc.get("learning", {}))
        acq = AcqConfig(**doc.get("acquisition", {}))
        loop_extra = doc.get("loop", {})
        loop = LoopConfig(learn=learn, acq=acq, **loop_extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad learning/acquisition/loop settings: {exc}") from exc

    n_init = doc.get("n_init", {})
    if isinstance(n_init, int):
        n_init = {"multi_fidelity": n_init, "single_fidelity": n_init}
    if not isinstance(n_init, dict):
        raise ConfigError("'n_init' must be an integer or an object")

    return ExperimentConfig(
        objective_name=name,
        methods=tuple(methods),
        budget=budget,
        seeds=tuple(seeds),
        n_init_multi=int(n_init.get("multi_fidelity", 10)),
        n_init_single=int(n_init.get("single_fidelity", 6)),
        noise_sd=float(obj.get("noise_sd", 0.0)),
        objective_seed=int(obj.get("seed", 0)),
        cost_model=cost_model,
        loop=loop,
        external_command=external_command,
        external_timeout=float(obj.get("timeout_seconds", 60.0)),
        external_dim=external_dim,
        output_dir=doc.get("output_dir"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def _build_objective(cfg: ExperimentConfig) -> ObjectiveSpec:
    if cfg.external_command is not None:
        return external_objective(
            cfg.external_command,
            cfg.external_timeout,
            design_dim=cfg.external_dim or 1,
            cost_model=cfg.cost_model,
        )
    return make_objective(
        cfg.objective_name,
        noise_sd=cfg.noise_sd,
        seed=cfg.objective_seed,
        cost_model=cfg.cost_model,
    )


def _execute_run(cfg: ExperimentConfig, method: str, seed: int) -> RunResult:
    objective = _build_objective(cfg)
    try:
        return run(
            objective,
            cfg.cost_model,
            cfg.budget,
            method,
            cfg.loop,
            seed,
            cfg.n_init_for(method),
        )
    finally:
        if objective.close is not None:
            objective.close()


def _worker(args: tuple[dict, str, int]) -> RunResult:
    doc, method, seed = args
    return _execute_run(parse_config(doc), method, seed)


# -- trace and summary emission ----------------------------------------------


def _format(v: float) -> str:
    return repr(float(v))


def trace_filename(cfg: ExperimentConfig, method: str, seed: int) -> str:
    return f"{cfg.objective_name}_{method}_seed{seed}.csv"


def emit_traces(
    results: dict[tuple[str, int], RunResult],
    out_dir: str | Path,
    cfg: ExperimentConfig,
) -> list[Path]:
    """Write one per-evaluation CSV per run plus the experiment summary CSV."""
    if not results:
        raise ValueError("no results to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for (method, seed), result in sorted(results.items()):
        dim = result.final_dataset.design_box.dim
        header = (
            ["iteration", "cum_cost"]
            + [f"x{i}" for i in range(dim)]
            + ["tau", "eps", "y", "best_at_target"]
        )
        lines = [",".join(header)]
        best_prev = -math.inf
        for i, (record, (cum, best)) in enumerate(
            zip(result.final_dataset.records, result.trace)
        ):
            if best is not None:
                if best < best_prev:
                    raise AssertionError("best-at-target decreased along the trace")
                best_prev = best
            row = (
                [str(i), _format(cum)]
                + [_format(v) for v in record.x]
                + [_format(record.z[0]), _format(record.z[1]), _format(record.y)]
                + ["" if best is None else _format(best)]
            )
            lines.append(",".join(row))
        path = out / trace_filename(cfg, method, seed)
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    written.append(_emit_summary(results, out, cfg))
    return written


def _cost_to_reach(result: RunResult, threshold: float) -> float:
    for cum, best in result.trace:
        if best is not None and best >= threshold:
            return cum
    return math.nan


def summarize(
    results: dict[tuple[str, int], RunResult], cfg: ExperimentConfig
) -> list[dict[str, Any]]:
    """Per-method best-at-target statistics over seeds."""
    objective = _build_objective(cfg)
    if objective.close is not None:
        objective.close()
    optimum = objective.known_optimum
    threshold = None
    if optimum is not None:
        f_star = optimum[1]
        threshold = f_star - 0.05 * abs(f_star)
    rows = []
    for method in cfg.methods:
        per_seed = [results[(method, s)] for s in cfg.seeds if (method, s) in results]
        bests = [r.best_y_target for r in per_seed if r.best_y_target is not None]
        costs = []
        if threshold is not None:
            costs = [
                c
                for c in (_cost_to_reach(r, threshold) for r in per_seed)
                if not math.isnan(c)
            ]
        rows.append(
            {
                "method": method,
                "objective": cfg.objective_name,
                "seeds": len(per_seed),
                "mean_best": float(np.mean(bests)) if bests else math.nan,
                "std_best": float(np.std(bests)) if bests else math.nan,
                "mean_cost_to_95pct": float(np.mean(costs)) if costs else math.nan,
            }
        )
    return rows


def _emit_summary(
    results: dict[tuple[str, int], RunResult], out: Path, cfg: ExperimentConfig
) -> Path:
    rows = summarize(results, cfg)
    lines = ["method,objective,seeds,mean_best,std_best,mean_cost_to_95pct"]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r["method"],
                    r["objective"],
                    str(r["seeds"]),
                    "" if math.isnan(r["mean_best"]) else _format(r["mean_best"]),
                    "" if math.isnan(r["std_best"]) else _format(r["std_best"]),
                    ""
                    if math.isnan(r["mean_cost_to_95pct"])
                    else _format(r["mean_cost_to_95pct"]),
                ]
            )
        )
    path = out / "summary.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    workers: int = 1,
    config_doc: dict | None = None,
) -> tuple[dict[tuple[str, int], RunResult], list[str]]:
    """Execute every (method, seed) run and write traces plus the summary.

    Returns the results plus a list of failure descriptions; failed runs do
    not prevent the others from completing.
    """
    tasks = [(method, seed) for method in cfg.methods for seed in cfg.seeds]
    results: dict[tuple[str, int], RunResult] = {}
    failures: list[str] = []
    if workers > 1 and config_doc is not None and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = pool.map(_worker, [(config_doc, m, s) for m, s in tasks])
            for (method, seed), result in zip(tasks, outcomes):
                results[(method, seed)] = result
    else:
        for method, seed in tasks:
            results[(method, seed)] = _execute_run(cfg, method, seed)
    for (method, seed), result in sorted(results.items()):
        if result.failed:
            failures.append(f"{method} seed {seed}: {result.failure_message}")
    emit_traces(results, out_dir, cfg)
    return results, failures


# -- entry point ---------------------------------------------------------------


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
        cfg = parse_config(doc)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out or cfg.output_dir or os.environ.get(OUTPUT_DIR_ENV, "warpbo-results")
    results, failures = run_experiment(cfg, out_dir, workers=args.workers, config_doc=doc)
    for row in summarize(results, cfg):
        std = row["std_best"]
        print(
            f"{row['method']:>20s}  best = {row['mean_best']:.6g}"
            f" +- {0.0 if math.isnan(std) else std:.6g}"
            f"  (n={row['seeds']})"
        )
    if failures:
        for f in failures:
            print(f"FAILED  {f}", file=sys.stderr)
        return 2
    print(f"traces written to {out_dir}")
    return 0


def _cmd_list(_: argparse.Namespace) -> int:
    for name in OBJECTIVE_NAMES:
        print(name)
    print("external  (child process speaking the line-delimited JSON protocol)")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    n_runs = len(cfg.methods) * len(cfg.seeds)
    print(f"config ok: objective={cfg.objective_name} methods={list(cfg.methods)} "
          f"seeds={list(cfg.seeds)} budget={cfg.budget} ({n_runs} runs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpbo", description="Multi-fidelity Bayesian optimization experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("--config", required=True, help="path to the JSON config")
    p_run.add_argument("--workers", type=int, default=1, help="parallel (method, seed) runs")
    p_run.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_DIR_ENV})")
    p_run.set_defaults(fn=_cmd_run)

    p_list = sub.add_parser("list-objectives", help="list built-in objectives")
    p_list.set_defaults(fn=_cmd_list)

    p_val = sub.add_parser("validate", help="dry-run schema check of a config")
    p_val.add_argument("--config", required=True, help="path to the JSON config")
    p_val.set_defaults(fn=_cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
