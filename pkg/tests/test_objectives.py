import math

import numpy as np
import pytest

from warpbo.objectives import (
    BRANIN_MIN,
    CURVE_OPTIMUM_VALUE,
    CURVE_OPTIMUM_X,
    PARK4_MAX,
    CostModel,
    branin,
    cost_eval,
    make_objective,
    mf_branin,
    mf_curve,
    mf_park4,
    noisy_wrap,
    park4,
)

TARGET = np.array([1.0, 1.0])


# -- cost model -------------------------------------------------------------


def test_cost_model_paper_values():
    cm = CostModel()
    assert cost_eval(cm, np.array([0.3, 1.0])) == pytest.approx(1.0)
    assert cost_eval(cm, np.array([0.7, 0.0])) == pytest.approx(0.2)
    assert cost_eval(cm, np.array([0.0, 0.5])) == pytest.approx(0.6)


def test_cost_model_affine_in_eps_and_tau_free(rng):
    cm = CostModel()
    for _ in range(20):
        eps = rng.uniform()
        tau1, tau2 = rng.uniform(), rng.uniform()
        assert cm.cost(np.array([tau1, eps])) == cm.cost(np.array([tau2, eps]))
    e1, e2 = 0.25, 0.75
    mid = cm.cost(np.array([0.0, (e1 + e2) / 2]))
    avg = 0.5 * (cm.cost(np.array([0.0, e1])) + cm.cost(np.array([0.0, e2])))
    assert mid == pytest.approx(avg)


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(c0=0.0)  # would make eps=0 evaluations free
    with pytest.raises(ValueError):
        CostModel(c_norm=0.0)
    with pytest.raises(ValueError):
        CostModel(c1=-1.0)


# -- target-fidelity exactness -----------------------------------------------


@pytest.mark.parametrize(
    "fn,dim,truth",
    [
        (mf_branin, 2, lambda x: -branin(np.array([-5.0, 0.0]) + x * 15.0)),
        (mf_park4, 4, park4),
    ],
)
def test_exact_ground_truth_at_target_fidelity(fn, dim, truth, rng):
    for _ in range(1000):
        x = rng.uniform(size=dim)
        assert fn(x, TARGET) == pytest.approx(truth(x), rel=1e-12, abs=1e-12)


def test_curve_value_at_its_peak():
    s1 = 1.0 - math.exp(-5.0)
    f0 = 0.5 * math.exp(-(0.25 + 0.36) / 0.2)
    expected = s1 * 1.0 + (1 - s1) * f0
    assert mf_curve(np.array([0.7, 0.2, 0.5]), TARGET) == pytest.approx(expected, rel=1e-12)


def test_branin_bias_structure():
    x = np.array([1.0 / 3.0, 0.5])  # maps to u1 = 0
    base = mf_branin(x, TARGET)
    at_zero = mf_branin(x, np.array([0.0, 0.0]))
    u2 = 0.5 * 15.0
    assert at_zero - base == pytest.approx(1.5 * math.cos(u2), rel=1e-10)


def test_park_eps_slope(rng):
    for _ in range(20):
        x = rng.uniform(size=4)
        tau = rng.uniform()
        y0 = mf_park4(x, np.array([tau, 0.0]))
        y1 = mf_park4(x, np.array([tau, 1.0]))
        assert y1 - y0 == pytest.approx(0.1 * park4(x), rel=1e-10)


def test_curve_low_fidelity_form(rng):
    for _ in range(20):
        x = rng.uniform(size=3)
        tau = rng.uniform()
        f0 = 0.5 * math.exp(-float(np.sum((x - np.array([0.2, 0.8, 0.5])) ** 2)) / 0.2)
        assert mf_curve(x, np.array([tau, 0.0])) == pytest.approx(
            f0 * (1 - 0.3 * (1 - tau)), rel=1e-10
        )


# -- known optima against brute-force oracles ---------------------------------


def test_branin_optimum_against_grid_oracle():
    g1, g2 = np.meshgrid(np.linspace(-5, 10, 400), np.linspace(0, 15, 400))
    a, b, c = 1.0, 5.1 / (4 * np.pi**2), 5 / np.pi
    r, s, t = 6.0, 10.0, 1 / (8 * np.pi)
    vals = a * (g2 - b * g1**2 + c * g1 - r) ** 2 + s * (1 - t) * np.cos(g1) + s
    assert abs(vals.min() - BRANIN_MIN) < 1e-2
    assert branin(np.array([np.pi, 2.275])) == pytest.approx(BRANIN_MIN, abs=1e-9)


def test_park_optimum_against_random_search_oracle():
    rng = np.random.default_rng(123)
    X = rng.uniform(size=(1_000_000, 4))
    x1 = np.maximum(X[:, 0], 1e-6)
    term1 = x1 / 2 * (np.sqrt(1 + (X[:, 1] + X[:, 2] ** 2) * X[:, 3] / x1**2) - 1)
    term2 = (x1 + 3 * X[:, 3]) * np.exp(1 + np.sin(X[:, 2]))
    vals = term1 + term2
    assert vals.max() <= PARK4_MAX + 1e-9
    assert PARK4_MAX - vals.max() < 0.5  # the corner optimum dominates
    assert park4(np.ones(4)) == pytest.approx(PARK4_MAX, rel=1e-12)


def test_curve_optimum_against_grid_oracle():
    axes = np.linspace(0.0, 1.0, 100)
    G = np.stack(np.meshgrid(axes, axes, axes, indexing="ij"), axis=-1).reshape(-1, 3)
    s1 = 1 - np.exp(-5.0)
    finf = np.exp(-np.sum((G - np.array([0.7, 0.2, 0.5])) ** 2, axis=1) / 0.08)
    f0 = 0.5 * np.exp(-np.sum((G - np.array([0.2, 0.8, 0.5])) ** 2, axis=1) / 0.2)
    vals = finf * s1 + f0 * (1 - s1)
    best = G[np.argmax(vals)]
    assert vals.max() <= CURVE_OPTIMUM_VALUE + 1e-9
    assert CURVE_OPTIMUM_VALUE - vals.max() < 1e-3
    assert np.max(np.abs(best - CURVE_OPTIMUM_X)) < 0.011  # grid spacing
    assert mf_curve(CURVE_OPTIMUM_X, TARGET) == pytest.approx(CURVE_OPTIMUM_VALUE, abs=1e-9)


def test_curve_slice_correlation_nonstationarity(rng):
    # correlation of nearby high-fidelity slices far exceeds nearby
    # low-fidelity slices: the structure the warp exists to capture
    X = rng.uniform(size=(500, 3))
    slices = {}
    for eps in (0.1, 0.2, 0.9, 1.0):
        slices[eps] = np.array([mf_curve(x, np.array([1.0, eps])) for x in X])
    corr_high = np.corrcoef(slices[0.9], slices[1.0])[0, 1]
    corr_low = np.corrcoef(slices[0.1], slices[0.2])[0, 1]
    assert corr_high > corr_low + 0.1


# -- construction and noise -----------------------------------------------------


def test_make_objective_registry():
    spec = make_objective("mf_curve")
    assert spec.design_box.dim == 3
    x_star, f_star = spec.known_optimum
    assert f_star == pytest.approx(CURVE_OPTIMUM_VALUE)
    y, cost = spec.evaluate(x_star, TARGET, 0)
    assert y == pytest.approx(f_star, abs=1e-9)
    assert cost == pytest.approx(1.0)
    with pytest.raises(ValueError):
        make_objective("nope")


def test_noisy_wrap_zero_noise_identity():
    spec = make_objective("mf_branin")
    wrapped = noisy_wrap(spec, 0.0, seed=1)
    x, z = np.array([0.3, 0.4]), np.array([0.5, 0.6])
    assert wrapped.evaluate(x, z, 3) == spec.evaluate(x, z, 3)


def test_noisy_wrap_deterministic_and_seed_sensitive():
    spec = noisy_wrap(make_objective("mf_branin"), 0.1, seed=2)
    x, z = np.array([0.3, 0.4]), np.array([0.5, 0.6])
    assert spec.evaluate(x, z, 7) == spec.evaluate(x, z, 7)
    assert spec.evaluate(x, z, 7) != spec.evaluate(x, z, 8)


def test_noisy_wrap_sample_standard_deviation():
    spec = make_objective("mf_park4")
    wrapped = noisy_wrap(spec, 0.25, seed=5)
    x, z = np.array([0.2, 0.4, 0.6, 0.8]), np.array([0.9, 0.3])
    clean, _ = spec.evaluate(x, z, 0)
    draws = np.array([wrapped.evaluate(x, z, s)[0] for s in range(10_000)])
    assert abs(draws.std() - 0.25) / 0.25 < 0.05
    assert abs(draws.mean() - clean) < 0.01


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        noisy_wrap(make_objective("mf_branin"), -0.1, seed=0)
