"""Joint hyperparameter and warp-weight learning by NLML minimization.

A limited-memory quasi-Newton descent (memory 10, backtracking line search
with the sufficient-decrease condition, bound clipping applied to every
trial point) is restarted from several initializations; the parameters
with the lowest marginal-likelihood objective win.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .gp import ModelParams, NumericalError, nlml_value_and_grad
from .warp import near_affine_reference

__all__ = ["LearnConfig", "quasi_newton_minimize", "learn_hyperparameters"]

_C1 = 1e-4  # sufficient-decrease constant
_MIN_STEP = 1e-14


@dataclass(frozen=True)
class LearnConfig:
    n_restarts: int = 3
    max_iters: int = 200
    grad_tolerance: float = 1e-5
    warp_init_scale: float = 0.5
    # L2 penalty pulling the warp weights toward the near-affine reference
    # embedding; without it the 32-weight embedding overfits small
    # evaluation histories badly (sigmoid saturation does not self-limit,
    # it sharpens the warp), and anchoring at zero would shrink toward a
    # collapsed embedding rather than the stationary model
    warp_penalty: float = 1.0
    standardize_targets: bool = True
    # log-space boxes for the kernel/noise parameters
    log_signal_bounds: tuple[float, float] = (-6.0, 6.0)
    log_length_bounds: tuple[float, float] = (-6.0, 6.0)
    log_noise_bounds: tuple[float, float] = (-12.0, 2.0)
    offdiag_bounds: tuple[float, float] = (-10.0, 10.0)  # finite-rank off-diagonals
    # restart draws are log-uniform inside these narrower boxes
    restart_log_signal: tuple[float, float] = (-2.0, 2.0)
    restart_log_length: tuple[float, float] = (math.log(0.1), math.log(2.0))
    restart_log_noise: tuple[float, float] = (-8.0, -2.0)

    def __post_init__(self) -> None:
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.grad_tolerance > 0:
            raise ValueError("grad_tolerance must be positive")
        if not self.warp_init_scale > 0:
            raise ValueError("warp_init_scale must be positive")
        for lo, hi in (
            self.log_signal_bounds,
            self.log_length_bounds,
            self.log_noise_bounds,
            self.offdiag_bounds,
        ):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError("parameter bounds must be finite with lo < hi")


def _two_loop(
    g: np.ndarray, s_hist: deque[np.ndarray], y_hist: deque[np.ndarray]
) -> np.ndarray:
    """L-BFGS two-loop recursion for the descent direction -H g."""
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(yi @ si) for si, yi in zip(s_hist, y_hist)]
    for si, yi, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(si @ q)
        alphas.append(a)
        q -= a * yi
    if s_hist:
        s_last, y_last = s_hist[-1], y_hist[-1]
        q *= float(s_last @ y_last) / float(y_last @ y_last)
    for (si, yi, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(yi @ q)
        q += (a - b) * si
    return -q


def quasi_newton_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    start: np.ndarray,
    *,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    max_iters: int = 200,
    grad_tolerance: float = 1e-5,
    memory: int = 10,
) -> tuple[np.ndarray, float]:
    """Minimize ``fun`` (value, gradient) from ``start``.

    Limited-memory quasi-Newton descent with backtracking that only ever
    accepts sufficient decrease, so the returned value never exceeds the
    starting value.  ``bounds`` (lower, upper vectors, +-inf allowed) are
    enforced by clipping every trial point.  Non-finite objective values
    during the search trigger backtracking; if no finite decrease exists
    the last finite iterate is returned.
    """
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    if bounds is not None:
        lo = np.asarray(bounds[0], dtype=float)
        hi = np.asarray(bounds[1], dtype=float)

    def clip(v: np.ndarray) -> np.ndarray:
        return v if lo is None else np.clip(v, lo, hi)

    x = clip(np.asarray(start, dtype=float).copy())
    f, g = fun(x)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("objective is not finite at the starting point")

    s_hist: deque[np.ndarray] = deque(maxlen=memory)
    y_hist: deque[np.ndarray] = deque(maxlen=memory)

    for _ in range(max_iters):
        proj_grad = x - clip(x - g)
        if float(np.max(np.abs(proj_grad))) < grad_tolerance:
            break
        p = _two_loop(g, s_hist, y_hist)
        if float(p @ g) >= 0.0:  # not a descent direction; reset to steepest
            p = -g
            s_hist.clear()
            y_hist.clear()

        step = 1.0
        accepted = False
        while step >= _MIN_STEP:
            x_new = clip(x + step * p)
            delta = x_new - x
            slope = float(g @ delta)
            if slope < 0.0:
                f_new, g_new = fun(x_new)
                if math.isfinite(f_new) and f_new <= f + _C1 * slope:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break

        s = x_new - x
        yv = g_new - g
        if float(s @ yv) > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(yv)):
            s_hist.append(s)
            y_hist.append(yv)
        else:
            # negative curvature along the step: stale pairs would keep
            # producing vanishing directions, so restart from steepest descent
            s_hist.clear()
            y_hist.clear()
        x, f, g = x_new, f_new, g_new

    return x, f


def _default_start(dataset: Dataset, template: ModelParams, cfg: LearnConfig) -> np.ndarray:
    """Moderate starting point: mid-range length scales, data-scaled noise."""
    y = dataset.targets()
    var_y = float(np.var(y))
    vec = template.pack()
    vec[0] = _clamp(math.log(max(var_y, 1e-4)), cfg.log_signal_bounds)
    dx = template.n_design_dims
    vec[1 : 1 + dx] = math.log(0.5)
    i = 1 + dx
    if template.fidelity_kind == "arbf":
        vec[i : i + 2] = math.log(0.5)
        i += 2
    else:
        for _ in range(2):
            vec[i : i + 3] = (0.0, 0.0, 0.0)  # identity weight matrices
            i += 3
    vec[i] = _clamp(math.log(max(0.01 * max(var_y, 1e-4), 1e-5)), cfg.log_noise_bounds)
    return vec


def _random_start(
    template: ModelParams, cfg: LearnConfig, rng: np.random.Generator
) -> np.ndarray:
    vec = template.pack()
    vec[0] = rng.uniform(*cfg.restart_log_signal)
    dx = template.n_design_dims
    vec[1 : 1 + dx] = rng.uniform(*cfg.restart_log_length, size=dx)
    i = 1 + dx
    if template.fidelity_kind == "arbf":
        vec[i : i + 2] = rng.uniform(*cfg.restart_log_length, size=2)
        i += 2
    else:
        for _ in range(2):
            vec[i] = rng.uniform(-1.0, 1.0)
            vec[i + 1] = rng.uniform(-0.5, 0.5)
            vec[i + 2] = rng.uniform(-1.0, 1.0)
            i += 3
    vec[i] = rng.uniform(*cfg.restart_log_noise)
    i += 1
    if template.warp.enabled:
        vec[i : i + 32] = near_affine_reference().to_flat() + rng.uniform(
            -cfg.warp_init_scale, cfg.warp_init_scale, size=32
        )
    return vec


def _clamp(v: float, bounds: tuple[float, float]) -> float:
    return min(max(v, bounds[0]), bounds[1])


def _pack_bounds(template: ModelParams, cfg: LearnConfig) -> tuple[np.ndarray, np.ndarray]:
    lo: list[float] = [cfg.log_signal_bounds[0]]
    hi: list[float] = [cfg.log_signal_bounds[1]]
    dx = template.n_design_dims
    lo += [cfg.log_length_bounds[0]] * dx
    hi += [cfg.log_length_bounds[1]] * dx
    if template.fidelity_kind == "arbf":
        lo += [cfg.log_length_bounds[0]] * 2
        hi += [cfg.log_length_bounds[1]] * 2
    else:
        for _ in range(2):
            lo += [cfg.log_length_bounds[0], cfg.offdiag_bounds[0], cfg.log_length_bounds[0]]
            hi += [cfg.log_length_bounds[1], cfg.offdiag_bounds[1], cfg.log_length_bounds[1]]
    lo.append(cfg.log_noise_bounds[0])
    hi.append(cfg.log_noise_bounds[1])
    if template.warp.enabled:
        lo += [-math.inf] * 32  # sigmoid saturation self-limits the warp weights
        hi += [math.inf] * 32
    return np.array(lo), np.array(hi)


def learn_hyperparameters(
    dataset: Dataset,
    cfg: LearnConfig,
    seed: int,
    template: ModelParams,
    previous: ModelParams | None = None,
) -> ModelParams:
    """Minimize the NLML over all parameters with random restarts.

    ``template`` fixes the model structure (design dimension, fidelity
    kernel kind, warp on/off).  Restart 0 starts from ``previous`` when
    given; the remaining restarts draw random log-uniform kernel parameters
    and fresh warp weights.  Deterministic per seed.
    """
    if len(dataset) < 2:
        raise ValueError("hyperparameter learning requires at least 2 evaluations")

    fit_data = dataset
    if cfg.standardize_targets:
        y = dataset.targets()
        std = float(np.std(y))
        scale = std if std > 1e-12 else 1.0
        fit_data = dataset.with_targets((y - float(np.mean(y))) / scale)

    warp_anchor = near_affine_reference().to_flat()

    def objective(vec: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            value, grad = nlml_value_and_grad(fit_data, template.unpack(vec))
        except NumericalError:
            return math.inf, np.zeros_like(vec)
        assert grad is not None
        if not math.isfinite(value):
            return math.inf, np.zeros_like(vec)
        if template.warp.enabled and cfg.warp_penalty > 0:
            dw = vec[-32:] - warp_anchor
            value += cfg.warp_penalty * float(dw @ dw)
            grad = grad.copy()
            grad[-32:] += 2.0 * cfg.warp_penalty * dw
        return value, grad

    bounds = _pack_bounds(template, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C6E]))

    best_vec: np.ndarray | None = None
    best_val = math.inf
    failures: list[str] = []
    for restart in range(cfg.n_restarts):
        if restart == 0:
            if previous is not None:
                start = np.clip(previous.pack(), bounds[0], bounds[1])
            else:
                start = _default_start(fit_data, template, cfg)
                if template.warp.enabled:
                    start[-32:] = warp_anchor  # stationary-equivalent start
        else:
            start = _random_start(template, cfg, rng)
        try:
            vec, value = quasi_newton_minimize(
                objective,
                start,
                bounds=bounds,
                max_iters=cfg.max_iters,
                grad_tolerance=cfg.grad_tolerance,
            )
        except ValueError as exc:
            failures.append(f"restart {restart}: {exc}")
            continue
        if value < best_val:
            best_val = value
            best_vec = vec

    if best_vec is None:
        raise NumericalError(
            "all hyperparameter restarts failed: " + "; ".join(failures)
        )
    return template.unpack(best_vec)
