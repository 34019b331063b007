import numpy as np
import pytest

from warpbo.globalopt import Box, DirectSearch, direct_maximize, lhs_sample, random_maximize
from warpbo.objectives import BRANIN_MIN, branin


def test_box_validation():
    with pytest.raises(ValueError):
        Box(np.array([0.0, 1.0]), np.array([1.0, 1.0]))  # lower == upper in dim 1
    with pytest.raises(ValueError):
        Box(np.array([0.0]), np.array([np.inf]))
    box = Box(np.array([-1.0, 0.0]), np.array([1.0, 2.0]))
    assert box.dim == 2
    assert box.contains(np.array([0.0, 1.0]))
    assert not box.contains(np.array([0.0, 2.5]))


# -- Latin hypercube ----------------------------------------------------------


def test_lhs_one_point_per_stratum():
    box = Box.unit(1)
    pts = lhs_sample(4, box, seed=3)
    strata = sorted(int(np.floor(p * 4)) for p in pts[:, 0])
    assert strata == [0, 1, 2, 3]


@pytest.mark.parametrize("n", [1, 4, 17, 100])
@pytest.mark.parametrize("dim", [1, 2, 25])
def test_lhs_exact_stratification(n, dim):
    box = Box.unit(dim)
    pts = lhs_sample(n, box, seed=n * 100 + dim)
    assert pts.shape == (n, dim)
    for j in range(dim):
        strata = np.floor(np.clip(pts[:, j], 0, np.nextafter(1, 0)) * n).astype(int)
        assert sorted(strata) == list(range(n))


def test_lhs_single_point_inside_box():
    box = Box(np.array([2.0, -1.0]), np.array([3.0, 4.0]))
    pts = lhs_sample(1, box, seed=0)
    assert box.contains(pts[0])


def test_lhs_deterministic_per_seed():
    box = Box.unit(3)
    assert np.array_equal(lhs_sample(9, box, seed=7), lhs_sample(9, box, seed=7))
    assert not np.array_equal(lhs_sample(9, box, seed=7), lhs_sample(9, box, seed=8))


def test_lhs_marginals_near_uniform():
    # Kolmogorov distance of each empirical marginal to uniform below 0.05
    pts = lhs_sample(100, Box.unit(2), seed=11)
    grid = np.linspace(0.0, 1.0, 501)
    for j in range(2):
        ecdf = np.searchsorted(np.sort(pts[:, j]), grid, side="right") / 100
        assert np.max(np.abs(ecdf - grid)) < 0.05


# -- random search ------------------------------------------------------------


def test_random_maximize_single_sample():
    box = Box.unit(2)
    p, v = random_maximize(lambda x: -np.sum(x**2), box, n=1, seed=4)
    rng = np.random.default_rng(4)
    expected = rng.uniform(size=(1, 2))[0]
    assert np.allclose(p, expected)
    assert v == -np.sum(expected**2)


def test_random_maximize_monotone_function():
    box = Box.unit(1)
    p, _ = random_maximize(lambda x: float(x[0]), box, n=4000, seed=1)
    assert p[0] > 0.999


def test_random_maximize_deterministic():
    box = Box.unit(3)
    f = lambda x: float(np.sin(x).sum())
    p1, v1 = random_maximize(f, box, 50, seed=9)
    p2, v2 = random_maximize(f, box, 50, seed=9)
    assert np.array_equal(p1, p2)
    assert v1 == v2


# -- DIRECT -------------------------------------------------------------------


def test_direct_quadratic_bowl():
    box = Box.unit(2)
    p, v = direct_maximize(lambda x: -np.sum((x - 0.3) ** 2), box, max_evals=200)
    assert np.max(np.abs(p - 0.3)) < 0.02
    assert v == pytest.approx(-np.sum((p - 0.3) ** 2))


def test_direct_constant_returns_center():
    box = Box(np.array([0.0, -2.0]), np.array([4.0, 2.0]))
    p, v = direct_maximize(lambda x: 7.25, box, max_evals=50)
    assert np.allclose(p, [2.0, 0.0])
    assert v == 7.25


def test_direct_negated_branin():
    box = Box(np.array([-5.0, 0.0]), np.array([0.0, 15.0]) + np.array([10.0, 0.0]))
    p, v = direct_maximize(lambda u: -branin(u), box, max_evals=500)
    assert abs(v - (-BRANIN_MIN)) < 0.05


def test_direct_never_leaves_box_and_reevaluates():
    box = Box(np.array([1.0, -1.0]), np.array([2.0, 1.0]))
    seen = []

    def f(x):
        seen.append(x.copy())
        return float(np.sin(3 * x[0]) * np.cos(2 * x[1]))

    p, v = direct_maximize(f, box, max_evals=300)
    for x in seen:
        assert box.contains(x, atol=1e-12)
    assert v == pytest.approx(f(p))


def test_direct_monotone_in_budget():
    box = Box.unit(3)
    f = lambda x: -float(np.sum((x - np.array([0.2, 0.7, 0.5])) ** 2))
    values = [direct_maximize(f, box, max_evals=n)[1] for n in (10, 50, 200, 800)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_direct_partition_volumes_each_round():
    box = Box.unit(2)
    search = DirectSearch(lambda x: float(np.sum(np.sin(5 * x))), box, max_evals=400)
    rounds = 0
    while search.step():
        total = search.rectangle_volumes().sum()
        assert abs(total - 1.0) < 1e-9
        rounds += 1
    assert rounds >= 3


def test_direct_max_evals_respected():
    box = Box.unit(2)
    count = 0

    def f(x):
        nonlocal count
        count += 1
        return float(x[0])

    direct_maximize(f, box, max_evals=37)
    assert count <= 37


def test_direct_nonfinite_center_rejected():
    box = Box.unit(1)
    with pytest.raises(ValueError):
        direct_maximize(lambda x: float("nan"), box, max_evals=10)
