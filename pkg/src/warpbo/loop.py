"""Budgeted outer loop: learn, acquire, evaluate, repeat until spent.

Each iteration learns all hyperparameters on the history, maximizes the
cost-normalized entropy-reduction acquisition over the joint (design,
fidelity) box, evaluates the chosen pair, and charges its cost against the
budget.  Method variants share this skeleton and differ only in the
fidelity kernel and in whether the fidelity is searched or pinned:

    nfw                 warped-fidelity ARBF kernel (the full model)
    boca                ARBF kernel on raw fidelities (warp bypassed)
    fabolas             finite-rank kernel on raw fidelities
    single_fidelity_bo  all evaluations at the target fidelity
    random              uniform designs at the target fidelity
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import AcqConfig, es_per_cost, sample_representers
from .data import (
    METHOD_TAGS,
    MULTI_FIDELITY_TAGS,
    BudgetLedger,
    Dataset,
    EvaluationRecord,
    RunResult,
)
from .external import EvaluationError
from .globalopt import Box, direct_maximize, lhs_sample
from .gp import ModelParams, fit, posterior
from .kernels import ArbfParams, FactorizedKernelParams, FiniteRankParams
from .learn import LearnConfig, learn_hyperparameters
from .objectives import FIDELITY_BOX, TARGET_FIDELITY, CostModel, ObjectiveSpec
from .seeding import stable_seed
from .warp import warp_init

__all__ = [
    "LoopConfig",
    "Proposal",
    "InitializationFailure",
    "initialize",
    "propose_next",
    "run",
    "best_at_target",
    "save_checkpoint",
    "load_checkpoint",
]

TARGET_MATCH_TOL = 1e-9


class InitializationFailure(RuntimeError):
    """Objective failed during the initial design; partial data preserved."""

    def __init__(self, message: str, dataset: Dataset, ledger: BudgetLedger):
        super().__init__(message)
        self.dataset = dataset
        self.ledger = ledger


@dataclass(frozen=True)
class LoopConfig:
    learn: LearnConfig = field(default_factory=LearnConfig)
    acq: AcqConfig = field(default_factory=AcqConfig)
    direct_evals: int = 2000
    fidelity_floor_frac: float = 0.05  # clamp proposals cheaper than this share of c(z*)
    target_snap_dist: float = 0.05  # snap fidelities this close to z* onto it exactly
    max_outer_iterations: int | None = None  # default: 10 * budget / min-cost
    posterior_argmax_evals: int = 500
    disable_warp: bool = False  # bypass the fidelity embedding (turns nfw into boca)
    # every k-th model-based proposal evaluates the posterior-mean argmax at
    # the target fidelity instead of the acquisition argmax, so the recorded
    # best tracks what the model already knows; None disables probing
    incumbent_probe_period: int | None = None


@dataclass(frozen=True)
class Proposal:
    x: np.ndarray
    z: np.ndarray
    params: ModelParams | None
    acq_value: float


def model_template(method_tag: str, design_dim: int, warp_seed: int = 0) -> ModelParams:
    """Structural ModelParams for a method: kernel kind and warp switch."""
    design = ArbfParams(1.0, np.full(design_dim, 0.5))
    if method_tag == "nfw":
        fidelity: ArbfParams | FiniteRankParams = ArbfParams(1.0, np.array([0.5, 0.5]))
        warp = warp_init(warp_seed, 0.5, enabled=True)
    elif method_tag in ("boca", "single_fidelity_bo", "random"):
        fidelity = ArbfParams(1.0, np.array([0.5, 0.5]))
        warp = warp_init(warp_seed, 0.5, enabled=False)
    elif method_tag == "fabolas":
        fidelity = FiniteRankParams(np.stack([np.eye(2), np.eye(2)]))
        warp = warp_init(warp_seed, 0.5, enabled=False)
    else:
        raise ValueError(f"unknown method tag {method_tag!r}; choose from {METHOD_TAGS}")
    return ModelParams(FactorizedKernelParams(design, fidelity), warp, 0.01)


def initialize(
    objective: ObjectiveSpec,
    n_init: int,
    method_tag: str,
    seed: int,
    budget: float,
) -> tuple[Dataset, BudgetLedger]:
    """Initial designs: LHS pairs for multi-fidelity methods, LHS at z* otherwise.

    Multi-fidelity methods draw designs and fidelity vectors by two
    independent Latin hypercube samples and pair them by a random
    permutation, so each design and each fidelity is used exactly once.
    """
    if n_init < 1:
        raise ValueError(f"n_init must be >= 1, got {n_init}")
    if method_tag not in METHOD_TAGS:
        raise ValueError(f"unknown method tag {method_tag!r}; choose from {METHOD_TAGS}")
    dataset = Dataset(objective.design_box, FIDELITY_BOX, TARGET_FIDELITY.copy())
    ledger = BudgetLedger(budget)
    designs = lhs_sample(n_init, objective.design_box, stable_seed(seed, "init-designs"))
    if method_tag in MULTI_FIDELITY_TAGS:
        fidelities = lhs_sample(n_init, FIDELITY_BOX, stable_seed(seed, "init-fidelities"))
        perm = np.random.default_rng(stable_seed(seed, "init-pairing")).permutation(n_init)
        fidelities = fidelities[perm]
    else:
        fidelities = np.tile(TARGET_FIDELITY, (n_init, 1))
    for i in range(n_init):
        eval_seed = stable_seed(seed, "init-eval", i)
        t0 = time.perf_counter()
        try:
            y, cost = objective.evaluate(designs[i], fidelities[i], eval_seed)
        except EvaluationError as exc:
            raise InitializationFailure(
                f"objective failed on initial design {i}: {exc}", dataset, ledger
            ) from exc
        dataset.append(
            EvaluationRecord(
                designs[i], fidelities[i], y, cost, eval_seed, time.perf_counter() - t0
            )
        )
        ledger.charge(cost)
    return dataset, ledger


def _clamp_fidelity(z: np.ndarray, cost_model: CostModel, cfg: LoopConfig) -> np.ndarray:
    """Apply the minimum-cost floor and the snap-to-target rule."""
    z = np.asarray(z, dtype=float).copy()
    floor = cfg.fidelity_floor_frac * cost_model.target_cost
    if cost_model.c1 > 0 and cost_model.cost(z) < floor:
        eps_floor = (floor * cost_model.c_norm - cost_model.c0) / cost_model.c1
        z[1] = min(max(z[1], eps_floor), 1.0)
    if np.max(np.abs(z - TARGET_FIDELITY)) <= cfg.target_snap_dist:
        return TARGET_FIDELITY.copy()
    return z


def propose_next(
    dataset: Dataset,
    method_tag: str,
    cfg: LoopConfig,
    seed: int,
    previous: ModelParams | None = None,
    cost_model: CostModel | None = None,
    iteration: int | None = None,
) -> Proposal:
    """Learn hyperparameters and maximize the acquisition for one iteration."""
    if len(dataset) < 2:
        raise ValueError("propose_next requires at least 2 records")
    if cost_model is None:
        cost_model = CostModel()
    box = dataset.design_box
    if method_tag == "random":
        rng = np.random.default_rng(stable_seed(seed, "random-proposal"))
        x = box.lower + rng.uniform(size=box.dim) * box.widths
        return Proposal(x, TARGET_FIDELITY.copy(), None, math.nan)

    template = model_template(method_tag, box.dim)
    if cfg.disable_warp and template.warp.enabled:
        template = ModelParams(
            template.kernel, replace(template.warp, enabled=False), template.noise_variance
        )
    params = learn_hyperparameters(
        dataset, cfg.learn, stable_seed(seed, "learn"), template, previous=previous
    )
    state = fit(dataset, params, standardize=cfg.learn.standardize_targets)

    period = cfg.incumbent_probe_period
    if period is not None and iteration is not None and iteration % period == period - 1:
        def target_mean(xv: np.ndarray) -> float:
            return posterior(xv, dataset.target_fidelity, state).mean

        x_hat, mean_hat = direct_maximize(target_mean, box, cfg.posterior_argmax_evals)
        return Proposal(x_hat, TARGET_FIDELITY.copy(), params, mean_hat)

    acq = replace(cfg.acq, seed=stable_seed(seed, "acq"))
    representers = sample_representers(state, dataset.target_fidelity, acq)

    if method_tag == "single_fidelity_bo":
        def score_design(x: np.ndarray) -> float:
            return es_per_cost(
                x, TARGET_FIDELITY, state, cost_model, acq, representers=representers
            )

        x, value = direct_maximize(score_design, box, cfg.direct_evals)
        return Proposal(x, TARGET_FIDELITY.copy(), params, value)

    joint = Box(
        np.concatenate([box.lower, FIDELITY_BOX.lower]),
        np.concatenate([box.upper, FIDELITY_BOX.upper]),
    )
    dx = box.dim

    def score_pair(v: np.ndarray) -> float:
        return es_per_cost(
            v[:dx], v[dx:], state, cost_model, acq, representers=representers
        )

    v, value = direct_maximize(score_pair, joint, cfg.direct_evals)
    x, z = v[:dx].copy(), _clamp_fidelity(v[dx:], cost_model, cfg)
    if not np.array_equal(z, v[dx:]):
        value = es_per_cost(x, z, state, cost_model, acq, representers=representers)

    # The trisection pattern never reaches the fidelity box's corner, so the
    # target-fidelity slice is searched separately; without this no proposal
    # would ever be evaluated at z* exactly.
    def score_target(xv: np.ndarray) -> float:
        return es_per_cost(
            xv, TARGET_FIDELITY, state, cost_model, acq, representers=representers
        )

    x_target, value_target = direct_maximize(
        score_target, box, max(cfg.direct_evals // 2, 50)
    )
    if value_target >= value:
        return Proposal(x_target, TARGET_FIDELITY.copy(), params, value_target)
    return Proposal(x, z, params, value)


def best_at_target(dataset: Dataset) -> tuple[np.ndarray, float] | None:
    """Best observed record whose fidelity equals the target exactly (tol 1e-9)."""
    best: tuple[np.ndarray, float] | None = None
    for record in dataset.records:
        if np.max(np.abs(record.z - dataset.target_fidelity)) <= TARGET_MATCH_TOL:
            if best is None or record.y > best[1]:
                best = (record.x, record.y)
    return best


def run(
    objective: ObjectiveSpec,
    cost_model: CostModel,
    budget: float,
    method_tag: str,
    cfg: LoopConfig,
    seed: int,
    n_init: int,
    checkpoint_path: str | Path | None = None,
) -> RunResult:
    """Full budgeted optimization run; deterministic per seed.

    The loop continues while the cheapest possible evaluation still fits in
    the budget, so the final evaluation may overshoot it but a budget within
    one minimum cost of the initialization spend yields zero iterations.
    Interrupted runs resume exactly from ``checkpoint_path`` when it exists.
    """
    resumed = None
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        resumed = load_checkpoint(checkpoint_path)
        if resumed["method_tag"] != method_tag or resumed["seed"] != seed:
            raise ValueError(
                "checkpoint belongs to a different run "
                f"(method {resumed['method_tag']!r}, seed {resumed['seed']})"
            )

    failed = False
    failure_message: str | None = None
    if resumed is not None:
        dataset = resumed["dataset"]
        ledger = BudgetLedger(budget, spent=resumed["spent"])
        t = resumed["iteration"]
        prev_params = resumed["params"]
    else:
        try:
            dataset, ledger = initialize(objective, n_init, method_tag, seed, budget)
        except InitializationFailure as exc:
            return _result_from_dataset(
                exc.dataset, exc.ledger, method_tag, seed, failed=True, message=str(exc)
            )
        t = 0
        prev_params = None
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, dataset, ledger, method_tag, seed, t, prev_params)

    min_cost = cost_model.min_cost
    cap = cfg.max_outer_iterations
    if cap is None:
        cap = int(math.ceil(10.0 * budget / min_cost))

    while ledger.spent + min_cost <= budget and t < cap:
        proposal = propose_next(
            dataset,
            method_tag,
            cfg,
            stable_seed(seed, "iter", t),
            previous=prev_params,
            cost_model=cost_model,
            iteration=t,
        )
        eval_seed = stable_seed(seed, "eval", t)
        t0 = time.perf_counter()
        try:
            y, cost = objective.evaluate(proposal.x, proposal.z, eval_seed)
        except EvaluationError as exc:
            failed = True
            failure_message = f"objective failed at iteration {t}: {exc}"
            break
        dataset.append(
            EvaluationRecord(
                proposal.x, proposal.z, y, cost, eval_seed, time.perf_counter() - t0
            )
        )
        ledger.charge(cost)
        prev_params = proposal.params if proposal.params is not None else prev_params
        t += 1
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, dataset, ledger, method_tag, seed, t, prev_params)

    result = _result_from_dataset(
        dataset, ledger, method_tag, seed, failed=failed, message=failure_message
    )
    if result.best_y_target is None and not failed:
        result = _force_target_estimate(
            objective, cost_model, dataset, ledger, method_tag, cfg, seed, prev_params, result
        )
    return result


def _result_from_dataset(
    dataset: Dataset,
    ledger: BudgetLedger,
    method_tag: str,
    seed: int,
    failed: bool = False,
    message: str | None = None,
) -> RunResult:
    trace: list[tuple[float, float | None]] = []
    cum = 0.0
    best: float | None = None
    best_x: np.ndarray | None = None
    for record in dataset.records:
        cum += record.cost
        if np.max(np.abs(record.z - dataset.target_fidelity)) <= TARGET_MATCH_TOL:
            if best is None or record.y > best:
                best = record.y
                best_x = record.x
        trace.append((cum, best))
    return RunResult(
        method_tag=method_tag,
        best_x=best_x,
        best_y_target=best,
        trace=trace,
        final_dataset=dataset,
        spent=ledger.spent,
        budget=ledger.budget,
        seed=seed,
        failed=failed,
        failure_message=message,
    )


def _force_target_estimate(
    objective: ObjectiveSpec,
    cost_model: CostModel,
    dataset: Dataset,
    ledger: BudgetLedger,
    method_tag: str,
    cfg: LoopConfig,
    seed: int,
    prev_params: ModelParams | None,
    result: RunResult,
) -> RunResult:
    """No target-fidelity record exists: evaluate or estimate the argmax at z*."""
    if len(dataset) < 2:
        return result
    params = prev_params
    if params is None:
        template = model_template(method_tag if method_tag != "random" else "boca", dataset.design_box.dim)
        params = learn_hyperparameters(
            dataset, cfg.learn, stable_seed(seed, "fallback-learn"), template
        )
    state = fit(dataset, params, standardize=cfg.learn.standardize_targets)

    def posterior_mean(x: np.ndarray) -> float:
        return posterior(x, dataset.target_fidelity, state).mean

    x_hat, mean_hat = direct_maximize(
        posterior_mean, dataset.design_box, cfg.posterior_argmax_evals
    )
    if ledger.spent + cost_model.target_cost <= ledger.budget:
        eval_seed = stable_seed(seed, "eval-forced")
        t0 = time.perf_counter()
        try:
            y, cost = objective.evaluate(x_hat, dataset.target_fidelity, eval_seed)
        except EvaluationError as exc:
            return replace(result, failed=True, failure_message=str(exc))
        dataset.append(
            EvaluationRecord(
                x_hat,
                dataset.target_fidelity.copy(),
                y,
                cost,
                eval_seed,
                time.perf_counter() - t0,
            )
        )
        ledger.charge(cost)
        return _result_from_dataset(dataset, ledger, method_tag, seed)
    return replace(result, best_x=x_hat, best_y_target=mean_hat, fallback_used=True)


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    dataset: Dataset,
    ledger: BudgetLedger,
    method_tag: str,
    seed: int,
    iteration: int,
    params: ModelParams | None,
) -> None:
    """Atomically write the loop state needed for a deterministic resume."""
    doc = {
        "version": 1,
        "method_tag": method_tag,
        "seed": seed,
        "iteration": iteration,
        "budget": ledger.budget,
        "spent": ledger.spent,
        "design_box": {
            "lower": dataset.design_box.lower.tolist(),
            "upper": dataset.design_box.upper.tolist(),
        },
        "target_fidelity": dataset.target_fidelity.tolist(),
        "records": [
            {
                "x": r.x.tolist(),
                "z": r.z.tolist(),
                "y": r.y,
                "cost": r.cost,
                "seed": r.seed,
                "wall_seconds": r.wall_seconds,
            }
            for r in dataset.records
        ],
        "params": params.to_dict() if params is not None else None,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    box = Box(np.array(doc["design_box"]["lower"]), np.array(doc["design_box"]["upper"]))
    dataset = Dataset(box, FIDELITY_BOX, np.array(doc["target_fidelity"]))
    for r in doc["records"]:
        dataset.append(
            EvaluationRecord(
                np.array(r["x"]), np.array(r["z"]), r["y"], r["cost"], r["seed"], r["wall_seconds"]
            )
        )
    params = ModelParams.from_dict(doc["params"]) if doc["params"] else None
    return {
        "method_tag": doc["method_tag"],
        "seed": doc["seed"],
        "iteration": doc["iteration"],
        "budget": doc["budget"],
        "spent": doc["spent"],
        "dataset": dataset,
        "params": params,
    }
