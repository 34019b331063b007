from dataclasses import replace

import numpy as np
import pytest

from warpbo.acquisition import AcqConfig
from warpbo.data import BudgetLedger, Dataset, EvaluationRecord
from warpbo.external import EvaluationError
from warpbo.globalopt import Box
from warpbo.gp import fit
from warpbo.kernels import gram_matrix
from warpbo.learn import LearnConfig
from warpbo.loop import (
    InitializationFailure,
    LoopConfig,
    best_at_target,
    initialize,
    load_checkpoint,
    model_template,
    propose_next,
    run,
    save_checkpoint,
)
from warpbo.objectives import CostModel, make_objective

from conftest import TARGET, make_dataset

LEAN = LoopConfig(
    learn=LearnConfig(n_restarts=1, max_iters=30, grad_tolerance=1e-3),
    acq=AcqConfig(n_representers=8, n_mc=32, n_fantasies=3),
    direct_evals=60,
)


def _failing_objective(fail_after):
    base = make_objective("mf_branin")
    calls = {"n": 0}

    def evaluate(x, z, seed):
        calls["n"] += 1
        if calls["n"] > fail_after:
            raise EvaluationError("simulator crashed")
        return base.evaluate(x, z, seed)

    return replace(base, evaluate=evaluate)


# -- initialization ---------------------------------------------------------------


def test_initialize_single_fidelity_paper_cost():
    obj = make_objective("mf_branin")
    ds, ledger = initialize(obj, n_init=6, method_tag="single_fidelity_bo", seed=0, budget=50)
    assert len(ds) == 6
    assert ledger.spent == pytest.approx(6.0)
    assert all(np.array_equal(r.z, TARGET) for r in ds.records)


def test_initialize_multi_fidelity_pairing_is_permutation():
    obj = make_objective("mf_curve")
    ds, _ = initialize(obj, n_init=10, method_tag="nfw", seed=1, budget=50)
    from warpbo.globalopt import lhs_sample
    from warpbo.objectives import FIDELITY_BOX
    from warpbo.seeding import stable_seed

    designs = lhs_sample(10, obj.design_box, stable_seed(1, "init-designs"))
    fids = lhs_sample(10, FIDELITY_BOX, stable_seed(1, "init-fidelities"))
    got_x = np.array([r.x for r in ds.records])
    got_z = np.array([r.z for r in ds.records])
    assert np.allclose(got_x, designs)  # designs keep their order
    # fidelities are the same set, permuted
    assert sorted(map(tuple, got_z)) == sorted(map(tuple, fids))


def test_initialize_deterministic():
    obj = make_objective("mf_branin", noise_sd=0.05, seed=3)
    a, _ = initialize(obj, 5, "boca", seed=9, budget=50)
    b, _ = initialize(obj, 5, "boca", seed=9, budget=50)
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.x, rb.x)
        assert np.array_equal(ra.z, rb.z)
        assert ra.y == rb.y


def test_initialize_failure_preserves_partial_data():
    with pytest.raises(InitializationFailure) as info:
        initialize(_failing_objective(3), 6, "single_fidelity_bo", seed=0, budget=50)
    assert len(info.value.dataset) == 3
    assert info.value.ledger.spent == pytest.approx(3.0)


def test_initialize_rejects_unknown_method():
    with pytest.raises(ValueError):
        initialize(make_objective("mf_branin"), 4, "cmaes", seed=0, budget=50)


# -- proposals ----------------------------------------------------------------------


def test_propose_random_is_uniform_at_target():
    ds = make_dataset(4, design_dim=2, seed=0)
    p1 = propose_next(ds, "random", LEAN, seed=5)
    p2 = propose_next(ds, "random", LEAN, seed=5)
    assert np.array_equal(p1.x, p2.x)
    assert np.array_equal(p1.z, TARGET)
    assert p1.params is None
    p3 = propose_next(ds, "random", LEAN, seed=6)
    assert not np.array_equal(p1.x, p3.x)


def test_propose_single_fidelity_pins_target():
    obj = make_objective("mf_branin")
    ds, _ = initialize(obj, 4, "single_fidelity_bo", seed=2, budget=50)
    proposal = propose_next(ds, "single_fidelity_bo", LEAN, seed=3)
    assert np.array_equal(proposal.z, TARGET)
    assert obj.design_box.contains(proposal.x)


def test_propose_requires_two_records():
    ds = make_dataset(1, design_dim=2, seed=1)
    with pytest.raises(ValueError):
        propose_next(ds, "nfw", LEAN, seed=0)


def test_warp_bypass_matches_boca_in_one_step():
    obj = make_objective("mf_curve", noise_sd=0.01, seed=0)
    ds, _ = initialize(obj, 6, "nfw", seed=4, budget=50)
    ds2, _ = initialize(obj, 6, "boca", seed=4, budget=50)
    # identical initial data
    for ra, rb in zip(ds.records, ds2.records):
        assert np.array_equal(ra.x, rb.x) and ra.y == rb.y

    nfw_template = model_template("nfw", 3)
    boca_template = model_template("boca", 3)
    bypassed = replace(
        nfw_template, warp=replace(nfw_template.warp, enabled=False)
    )
    K_bypass = gram_matrix(ds, bypassed.kernel, bypassed.warp)
    K_boca = gram_matrix(ds2, boca_template.kernel, boca_template.warp)
    assert np.max(np.abs(K_bypass - K_boca)) < 1e-12

    # with the warp switched off, the nfw code path proposes exactly what
    # boca proposes from the same data and seed
    p_bypass = propose_next(ds, "nfw", replace(LEAN, disable_warp=True), seed=7)
    p_boca = propose_next(ds2, "boca", LEAN, seed=7)
    assert np.array_equal(p_bypass.x, p_boca.x)
    assert np.array_equal(p_bypass.z, p_boca.z)


def test_incumbent_probe_evaluates_posterior_argmax():
    obj = make_objective("mf_branin")
    ds, _ = initialize(obj, 5, "boca", seed=6, budget=50)
    cfg = replace(LEAN, incumbent_probe_period=3)
    # iteration 2 is a probe round (period 3): proposal must sit at z* and
    # at the posterior-mean maximizer rather than the acquisition argmax
    probe = propose_next(ds, "boca", cfg, seed=9, iteration=2)
    assert np.array_equal(probe.z, TARGET)
    from warpbo.gp import fit, posterior
    from warpbo.globalopt import direct_maximize

    state = fit(ds, probe.params, standardize=True)
    x_hat, _ = direct_maximize(
        lambda xv: posterior(xv, TARGET, state).mean, ds.design_box, cfg.posterior_argmax_evals
    )
    assert np.array_equal(probe.x, x_hat)
    # non-probe rounds are unaffected by the setting
    normal = propose_next(ds, "boca", cfg, seed=9, iteration=1)
    plain = propose_next(ds, "boca", LEAN, seed=9, iteration=1)
    assert np.array_equal(normal.x, plain.x)
    assert np.array_equal(normal.z, plain.z)


def test_fidelity_floor_clamps_cheap_proposals():
    from warpbo.loop import _clamp_fidelity

    cm = CostModel(c0=1.0, c1=249.0, c_norm=250.0)  # near-free low fidelity
    cfg = LoopConfig(fidelity_floor_frac=0.05)
    z = _clamp_fidelity(np.array([0.5, 0.0]), cm, cfg)
    assert cm.cost(z) >= 0.05 * cm.target_cost - 1e-12
    # already-expensive proposals pass through unchanged
    z2 = _clamp_fidelity(np.array([0.5, 0.6]), cm, cfg)
    assert np.array_equal(z2, [0.5, 0.6])


def test_target_snap():
    from warpbo.loop import _clamp_fidelity

    cfg = LoopConfig(target_snap_dist=0.05)
    z = _clamp_fidelity(np.array([0.97, 0.99]), CostModel(), cfg)
    assert np.array_equal(z, TARGET)
    z2 = _clamp_fidelity(np.array([0.9, 0.99]), CostModel(), cfg)
    assert not np.array_equal(z2, TARGET)


# -- best at target ---------------------------------------------------------------


def test_best_at_target_empty():
    ds = Dataset(Box.unit(1), Box.unit(2), TARGET.copy())
    assert best_at_target(ds) is None


def test_best_at_target_single_and_mixed():
    ds = Dataset(Box.unit(1), Box.unit(2), TARGET.copy())
    ds.append(EvaluationRecord(np.array([0.2]), np.array([0.5, 0.5]), 99.0, 1.0, 0))
    assert best_at_target(ds) is None
    ds.append(EvaluationRecord(np.array([0.4]), TARGET.copy(), 1.5, 1.0, 1))
    ds.append(EvaluationRecord(np.array([0.6]), TARGET.copy(), 0.5, 1.0, 2))
    x, y = best_at_target(ds)
    assert y == 1.5
    assert np.array_equal(x, [0.4])


# -- full runs ----------------------------------------------------------------------


def test_run_zero_iterations_when_budget_barely_above_init():
    obj = make_objective("mf_branin")
    result = run(obj, CostModel(), budget=6.1, method_tag="single_fidelity_bo",
                 cfg=LEAN, seed=0, n_init=6)
    assert len(result.final_dataset) == 6  # no outer iterations
    assert result.spent == pytest.approx(6.0)
    best = max(r.y for r in result.final_dataset.records)
    assert result.best_y_target == pytest.approx(best)


def test_run_ledger_and_trace_invariants():
    obj = make_objective("mf_branin", noise_sd=0.01, seed=1)
    result = run(obj, CostModel(), budget=8.0, method_tag="boca", cfg=LEAN, seed=1, n_init=4)
    costs = result.final_dataset.costs()
    assert abs(result.spent - costs.sum()) < 1e-12
    cums = [c for c, _ in result.trace]
    assert all(b > a for a, b in zip(cums, cums[1:]))
    bests = [b for _, b in result.trace if b is not None]
    assert all(b2 >= b1 for b1, b2 in zip(bests, bests[1:]))
    assert len(result.trace) == len(result.final_dataset)


def test_run_terminates_within_iteration_cap():
    obj = make_objective("mf_branin")
    result = run(obj, CostModel(), budget=6.0, method_tag="random", cfg=LEAN, seed=2, n_init=2)
    # each iteration costs exactly 1 at the target fidelity
    assert result.spent <= 6.0 + 1.0
    assert len(result.final_dataset) <= 2 + int(10 * 6.0 / 0.2)


def test_run_failure_mid_run_keeps_prefix():
    obj = _failing_objective(5)
    result = run(obj, CostModel(), budget=20.0, method_tag="random", cfg=LEAN, seed=3, n_init=3)
    assert result.failed
    assert "iteration" in result.failure_message
    assert len(result.final_dataset) == 5
    assert result.spent == pytest.approx(5.0)


def test_run_init_failure_flagged():
    obj = _failing_objective(2)
    result = run(obj, CostModel(), budget=20.0, method_tag="random", cfg=LEAN, seed=3, n_init=5)
    assert result.failed
    assert len(result.final_dataset) == 2


def test_run_forced_target_evaluation_when_cap_stops_early():
    # multi-fidelity init has no target-fidelity record; with the loop capped
    # at zero iterations and budget remaining, one forced evaluation at z*
    # must be appended
    obj = make_objective("mf_curve", noise_sd=0.0)
    cfg = replace(LEAN, max_outer_iterations=0)
    result = run(obj, CostModel(), budget=50.0, method_tag="boca", cfg=cfg, seed=5, n_init=5)
    assert not result.fallback_used
    last = result.final_dataset.records[-1]
    assert np.array_equal(last.z, TARGET)
    assert result.best_y_target == pytest.approx(last.y)


def test_run_fallback_posterior_estimate_when_budget_gone():
    # budget exhausted by a multi-fidelity init (no z* records): the result
    # must fall back to a flagged posterior-mean estimate
    obj = make_objective("mf_curve")
    ds, ledger = initialize(obj, 8, "boca", seed=11, budget=50.0)
    budget = ledger.spent + 0.1  # cannot afford even the cheapest evaluation
    result = run(obj, CostModel(), budget=budget, method_tag="boca", cfg=LEAN, seed=11, n_init=8)
    assert result.fallback_used
    assert result.best_y_target is not None
    assert obj.design_box.contains(result.best_x)
    assert all(not np.array_equal(r.z, TARGET) for r in result.final_dataset.records)


def test_run_deterministic():
    obj = make_objective("mf_branin", noise_sd=0.02, seed=4)
    a = run(obj, CostModel(), budget=7.5, method_tag="fabolas", cfg=LEAN, seed=6, n_init=4)
    b = run(obj, CostModel(), budget=7.5, method_tag="fabolas", cfg=LEAN, seed=6, n_init=4)
    assert len(a.final_dataset) == len(b.final_dataset)
    for ra, rb in zip(a.final_dataset.records, b.final_dataset.records):
        assert np.array_equal(ra.x, rb.x)
        assert np.array_equal(ra.z, rb.z)
        assert ra.y == rb.y


# -- checkpointing ------------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    ds = make_dataset(5, design_dim=2, seed=20)
    ledger = BudgetLedger(10.0, spent=2.5)
    params = model_template("nfw", 2)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, ds, ledger, "nfw", 7, 3, params)
    doc = load_checkpoint(path)
    assert doc["method_tag"] == "nfw"
    assert doc["seed"] == 7
    assert doc["iteration"] == 3
    assert doc["spent"] == 2.5
    assert len(doc["dataset"]) == 5
    assert np.allclose(doc["params"].pack(), params.pack())


def test_run_resume_matches_uninterrupted(tmp_path):
    obj = make_objective("mf_branin", noise_sd=0.01, seed=2)
    cm = CostModel()
    full = run(obj, cm, budget=8.0, method_tag="boca", cfg=LEAN, seed=8, n_init=4)

    path = tmp_path / "resume.json"
    partial_cfg = replace(LEAN, max_outer_iterations=2)
    run(obj, cm, budget=8.0, method_tag="boca", cfg=partial_cfg, seed=8, n_init=4,
        checkpoint_path=path)
    resumed = run(obj, cm, budget=8.0, method_tag="boca", cfg=LEAN, seed=8, n_init=4,
                  checkpoint_path=path)
    assert len(resumed.final_dataset) == len(full.final_dataset)
    for ra, rb in zip(resumed.final_dataset.records, full.final_dataset.records):
        assert np.array_equal(ra.x, rb.x)
        assert np.array_equal(ra.z, rb.z)
        assert ra.y == rb.y
        assert ra.cost == rb.cost
    assert resumed.spent == pytest.approx(full.spent)


def test_resume_rejects_mismatched_run(tmp_path):
    obj = make_objective("mf_branin")
    path = tmp_path / "ckpt.json"
    cfg = replace(LEAN, max_outer_iterations=0)
    run(obj, CostModel(), budget=8.0, method_tag="boca", cfg=cfg, seed=1, n_init=3,
        checkpoint_path=path)
    with pytest.raises(ValueError):
        run(obj, CostModel(), budget=8.0, method_tag="boca", cfg=cfg, seed=2, n_init=3,
            checkpoint_path=path)
