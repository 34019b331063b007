"""Synthetic multi-fidelity objectives and the evaluation cost model.

Each objective exposes the design space as a unit box (affinely mapped to
its native domain internally) and takes a fidelity vector z = (tau, eps)
in [0, 1]^2.  At the target fidelity z = (1, 1) every objective equals its
ground-truth target function exactly; away from it, fidelity-dependent
bias terms distort the landscape.  All values are maximized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .globalopt import Box
from .seeding import stable_seed

__all__ = [
    "CostModel",
    "ObjectiveSpec",
    "branin",
    "park4",
    "mf_branin",
    "mf_park4",
    "mf_curve",
    "noisy_wrap",
    "make_objective",
    "OBJECTIVE_NAMES",
]

TARGET_FIDELITY = np.array([1.0, 1.0])
FIDELITY_BOX = Box(np.zeros(2), np.ones(2))


@dataclass(frozen=True)
class CostModel:
    """Affine evaluation cost c(z) = (c0 + c1 * eps) / c_norm.

    Only the epochs component eps = z[1] is charged; task difficulty tau is
    free.  Defaults: c0=50, c1=200, c_norm=250, so costs range over
    [0.2, 1.0] with the target fidelity costing exactly 1.
    """

    c0: float = 50.0
    c1: float = 200.0
    c_norm: float = 250.0

    def __post_init__(self) -> None:
        if self.c0 < 0 or self.c1 < 0:
            raise ValueError("cost coefficients must be non-negative")
        if not self.c_norm > 0:
            raise ValueError(f"c_norm must be positive, got {self.c_norm}")
        if not self.c0 / self.c_norm > 0:
            raise ValueError("cost at eps=0 must be positive (c0 > 0)")

    def cost(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return (self.c0 + self.c1 * float(z[1])) / self.c_norm

    @property
    def min_cost(self) -> float:
        return self.c0 / self.c_norm

    @property
    def target_cost(self) -> float:
        return (self.c0 + self.c1) / self.c_norm


def cost_eval(cm: CostModel, z: np.ndarray) -> float:
    return cm.cost(z)


@dataclass(frozen=True)
class ObjectiveSpec:
    """A maximizable multi-fidelity objective with its domain and cost.

    ``evaluate(x, z, seed) -> (y, cost)`` is deterministic for fixed
    arguments.  ``known_optimum`` is the (x*, f*) pair at the target
    fidelity when available.
    """

    name: str
    design_box: Box
    evaluate: Callable[[np.ndarray, np.ndarray, int], tuple[float, float]]
    cost_model: CostModel
    known_optimum: Optional[tuple[np.ndarray, float]] = None
    noise_sd: float = 0.0
    close: Optional[Callable[[], None]] = None


# -- base test functions ----------------------------------------------------


def branin(u: np.ndarray) -> float:
    """Branin function on its native domain [-5, 10] x [0, 15] (minimized form)."""
    u = np.asarray(u, dtype=float)
    a, b, c = 1.0, 5.1 / (4.0 * math.pi**2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8.0 * math.pi)
    return float(
        a * (u[1] - b * u[0] ** 2 + c * u[0] - r) ** 2 + s * (1 - t) * math.cos(u[0]) + s
    )


BRANIN_MIN = 0.3978873577297382  # attained at (pi, 2.275) among others


def park4(x: np.ndarray) -> float:
    """Park function on [0, 1]^4; singular coordinate x1 floored at 1e-6."""
    x = np.asarray(x, dtype=float)
    x1 = max(float(x[0]), 1e-6)
    term1 = x1 / 2.0 * (math.sqrt(1.0 + (x[1] + x[2] ** 2) * x[3] / x1**2) - 1.0)
    term2 = (x1 + 3.0 * x[3]) * math.exp(1.0 + math.sin(x[2]))
    return term1 + term2


PARK4_MAX = 25.589254158606547  # at (1, 1, 1, 1), located by exhaustive search


# -- multi-fidelity objectives ----------------------------------------------

_BRANIN_LO = np.array([-5.0, 0.0])
_BRANIN_WIDTH = np.array([15.0, 15.0])


def mf_branin(x: np.ndarray, z: np.ndarray) -> float:
    """Negated Branin over the unit box plus fidelity bias terms.

    y(x, z) = -branin(u) + 2 (1 - tau) sin(u1) + 1.5 (1 - eps) cos(u2)
    with u the affinely mapped design; exact negated Branin at z = (1, 1).
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    u = _BRANIN_LO + x * _BRANIN_WIDTH
    bias = 2.0 * (1.0 - z[0]) * math.sin(u[0]) + 1.5 * (1.0 - z[1]) * math.cos(u[1])
    return -branin(u) + bias


def mf_park4(x: np.ndarray, z: np.ndarray) -> float:
    """Park function scaled by a fidelity factor minus a task-difficulty penalty.

    y(x, z) = park(x) * (0.9 + 0.1 eps) - (1 - tau) * 0.5 * |x|_1; exact
    Park value at z = (1, 1).
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    return park4(x) * (0.9 + 0.1 * float(z[1])) - (1.0 - float(z[0])) * 0.5 * float(
        np.sum(np.abs(x))
    )


_CURVE_TARGET_CENTER = np.array([0.7, 0.2, 0.5])
_CURVE_LOW_CENTER = np.array([0.2, 0.8, 0.5])


def mf_curve(x: np.ndarray, z: np.ndarray) -> float:
    """Saturating-learning-curve objective with strongly non-stationary fidelity.

    A saturation profile s(eps) = 1 - exp(-5 eps) interpolates between a
    low-fidelity bump f0 (peaked away from the target optimum) and the
    target bump f_inf, so slices at eps in [0.9, 1.0] correlate far more
    strongly than slices at eps in [0.1, 0.2]:

        y(x, z) = f_inf(x) s(eps) + f0(x) (1 - s(eps)) - 0.3 (1 - tau) f0(x)
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    s = 1.0 - math.exp(-5.0 * float(z[1]))
    f_inf = math.exp(-float(np.sum((x - _CURVE_TARGET_CENTER) ** 2)) / 0.08)
    f0 = 0.5 * math.exp(-float(np.sum((x - _CURVE_LOW_CENTER) ** 2)) / 0.2)
    return f_inf * s + f0 * (1.0 - s) - 0.3 * (1.0 - float(z[0])) * f0


CURVE_OPTIMUM_X = np.array([0.69996786, 0.20003856, 0.5])
CURVE_OPTIMUM_VALUE = 0.9934216352400258  # located by grid search plus polish


# -- objective construction --------------------------------------------------


def _spec_from_function(
    name: str,
    fn: Callable[[np.ndarray, np.ndarray], float],
    dim: int,
    known_optimum: Optional[tuple[np.ndarray, float]],
    cost_model: CostModel,
) -> ObjectiveSpec:
    def evaluate(x: np.ndarray, z: np.ndarray, seed: int) -> tuple[float, float]:
        return fn(x, z), cost_model.cost(z)

    return ObjectiveSpec(
        name=name,
        design_box=Box.unit(dim),
        evaluate=evaluate,
        cost_model=cost_model,
        known_optimum=known_optimum,
    )


def noisy_wrap(spec: ObjectiveSpec, noise_sd: float, seed: int) -> ObjectiveSpec:
    """Add Gaussian observation noise, deterministic per (x, z, seed)."""
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be non-negative, got {noise_sd}")
    if noise_sd == 0.0:
        return spec
    inner = spec.evaluate

    def evaluate(x: np.ndarray, z: np.ndarray, eval_seed: int) -> tuple[float, float]:
        y, cost = inner(x, z, eval_seed)
        rng = np.random.default_rng(stable_seed(seed, eval_seed, x, z))
        return y + noise_sd * float(rng.standard_normal()), cost

    return replace(spec, evaluate=evaluate, noise_sd=noise_sd)


_REGISTRY: dict[str, tuple[Callable[[np.ndarray, np.ndarray], float], int, tuple]] = {
    "mf_branin": (
        mf_branin,
        2,
        (np.array([(math.pi + 5.0) / 15.0, 2.275 / 15.0]), -BRANIN_MIN),
    ),
    "mf_park4": (mf_park4, 4, (np.array([1.0, 1.0, 1.0, 1.0]), PARK4_MAX)),
    "mf_curve": (mf_curve, 3, (CURVE_OPTIMUM_X, CURVE_OPTIMUM_VALUE)),
}

OBJECTIVE_NAMES = tuple(sorted(_REGISTRY))


def make_objective(
    name: str,
    noise_sd: float = 0.0,
    seed: int = 0,
    cost_model: CostModel | None = None,
) -> ObjectiveSpec:
    """Build a synthetic objective by name, optionally noise-wrapped."""
    if name not in _REGISTRY:
        raise ValueError(f"unknown objective {name!r}; choose from {OBJECTIVE_NAMES}")
    fn, dim, optimum = _REGISTRY[name]
    cm = cost_model if cost_model is not None else CostModel()
    spec = _spec_from_function(name, fn, dim, (optimum[0], optimum[1]), cm)
    return noisy_wrap(spec, noise_sd, seed)
