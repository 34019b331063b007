"""Derivative-free global optimizers over box domains.

Provides the dividing-rectangles (DIRECT) search used to maximize
acquisition surfaces, Latin hypercube sampling for initial designs, and
plain random search as a baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Box",
    "lhs_sample",
    "random_maximize",
    "direct_maximize",
    "DirectSearch",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with finite bounds, lower < upper componentwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("box requires lower < upper in every dimension")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, point: np.ndarray, atol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(
            p.shape == self.lower.shape
            and np.all(p >= self.lower - atol)
            and np.all(p <= self.upper + atol)
        )

    def clip(self, point: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(point, dtype=float), self.lower, self.upper)

    @classmethod
    def unit(cls, dim: int) -> "Box":
        return cls(np.zeros(dim), np.ones(dim))


def lhs_sample(n: int, box: Box, seed: int) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in ``box``.

    Each dimension is cut into ``n`` equal strata and receives exactly one
    point per stratum, uniformly jittered within it.  Deterministic for a
    fixed seed.

    Returns an ``(n, dim)`` array.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    d = box.dim
    out = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n)
        jitter = rng.uniform(size=n)
        out[:, j] = (strata + jitter) / n
    return box.lower + out * box.widths


def random_maximize(
    f: Callable[[np.ndarray], float], box: Box, n: int, seed: int
) -> tuple[np.ndarray, float]:
    """Best of ``n`` uniform samples; deterministic per seed."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    points = box.lower + rng.uniform(size=(n, box.dim)) * box.widths
    best_val = -math.inf
    best_point = points[0]
    for p in points:
        v = float(f(p))
        if v > best_val:
            best_val = v
            best_point = p
    return best_point.copy(), best_val


@dataclass
class _Rect:
    """One hyperrectangle of the DIRECT partition, in normalized [0,1]^d."""

    center: np.ndarray
    splits: np.ndarray  # per-dimension trisection counts; side_j = 3^-splits_j
    value: float  # objective at the center, in minimization sign

    def measure(self) -> float:
        # center-to-vertex distance of the rectangle
        return 0.5 * math.sqrt(float(np.sum(9.0 ** (-self.splits))))


class DirectSearch:
    """Dividing-rectangles global maximization over a box.

    Deterministic: maintains a partition of the (normalized) box into
    hyperrectangles with center evaluations, selects potentially optimal
    rectangles each round via the lower-convex-hull criterion with balance
    parameter ``eps``, and trisects them along their longest sides.  Stops
    once ``max_evals`` center evaluations have been spent.

    The partition invariant (rectangle volumes sum to the box volume) holds
    after every completed round; ``rectangle_volumes`` exposes it for
    verification.
    """

    def __init__(
        self,
        f: Callable[[np.ndarray], float],
        box: Box,
        max_evals: int,
        eps: float = 1e-4,
    ) -> None:
        if max_evals < 1:
            raise ValueError(f"max_evals must be >= 1, got {max_evals}")
        self._f = f
        self._box = box
        self._max_evals = max_evals
        self._eps = eps
        self._evals = 0
        self.best_point: np.ndarray | None = None
        self.best_value = -math.inf

        d = box.dim
        center = np.full(d, 0.5)
        value = self._evaluate(center)
        if not math.isfinite(value):
            raise ValueError("objective is not finite at the box center")
        self._rects: list[_Rect] = [_Rect(center, np.zeros(d, dtype=int), -value)]

    # -- introspection ----------------------------------------------------

    @property
    def evaluations(self) -> int:
        return self._evals

    @property
    def rectangles(self) -> list[_Rect]:
        return self._rects

    def rectangle_volumes(self) -> np.ndarray:
        """Normalized volume of every rectangle in the current partition."""
        return np.array(
            [float(np.prod(3.0 ** (-r.splits.astype(float)))) for r in self._rects]
        )

    # -- search -----------------------------------------------------------

    def _evaluate(self, unit_point: np.ndarray) -> float:
        point = self._box.lower + unit_point * self._box.widths
        value = float(self._f(point))
        if math.isnan(value):
            value = -math.inf
        self._evals += 1
        if value > self.best_value:
            self.best_value = value
            self.best_point = point
        return value

    def _potentially_optimal(self) -> list[int]:
        # One candidate per size class: the first rectangle attaining the
        # minimal value within the class.
        classes: dict[float, int] = {}
        for idx, r in enumerate(self._rects):
            m = r.measure()
            cur = classes.get(m)
            if cur is None or r.value < self._rects[cur].value:
                classes[m] = idx
        measures = sorted(classes)
        f_min = min(r.value for r in self._rects)
        chosen: list[int] = []
        for k, m in enumerate(measures):
            idx = classes[m]
            fj = self._rects[idx].value
            left = max(
                ((fj - self._rects[classes[mi]].value) / (m - mi) for mi in measures[:k]),
                default=-math.inf,
            )
            right = min(
                ((self._rects[classes[mi]].value - fj) / (mi - m) for mi in measures[k + 1 :]),
                default=math.inf,
            )
            if left > right:
                continue
            if math.isfinite(right):
                if f_min != 0.0:
                    if self._eps > (f_min - fj) / abs(f_min) + (m / abs(f_min)) * right:
                        continue
                elif fj > m * right:
                    continue
            chosen.append(idx)
        return chosen

    def step(self) -> bool:
        """Run one round of selection and trisection.

        Returns False when the evaluation budget is exhausted (or nothing
        could be divided), True if the search can continue.
        """
        if self._evals >= self._max_evals:
            return False
        divided_any = False
        for idx in self._potentially_optimal():
            rect = self._rects[idx]
            if self._max_evals - self._evals < 2:
                break
            smallest_split = int(rect.splits.min())
            long_dims = np.flatnonzero(rect.splits == smallest_split)
            delta = 3.0 ** (-(smallest_split + 1))
            trials: list[tuple[float, int, np.ndarray, float, np.ndarray, float]] = []
            for dim in long_dims:
                if self._max_evals - self._evals < 2:
                    break
                c_plus = rect.center.copy()
                c_plus[dim] += delta
                c_minus = rect.center.copy()
                c_minus[dim] -= delta
                v_plus = -self._evaluate(c_plus)
                v_minus = -self._evaluate(c_minus)
                trials.append((min(v_plus, v_minus), int(dim), c_plus, v_plus, c_minus, v_minus))
            # Best axes are carved off first so their children stay large.
            trials.sort(key=lambda t: (t[0], t[1]))
            for _, dim, c_plus, v_plus, c_minus, v_minus in trials:
                rect.splits = rect.splits.copy()
                rect.splits[dim] += 1
                self._rects.append(_Rect(c_plus, rect.splits.copy(), v_plus))
                self._rects.append(_Rect(c_minus, rect.splits.copy(), v_minus))
                divided_any = True
        return divided_any and self._evals < self._max_evals

    def run(self) -> tuple[np.ndarray, float]:
        while self.step():
            pass
        assert self.best_point is not None
        return self.best_point, self.best_value


def direct_maximize(
    f: Callable[[np.ndarray], float],
    box: Box,
    max_evals: int,
    eps: float = 1e-4,
) -> tuple[np.ndarray, float]:
    """Maximize ``f`` over ``box`` with at most ``max_evals`` evaluations.

    Returns the best evaluated point (in original coordinates) and its
    value.  Deterministic; never evaluates outside the box.
    """
    return DirectSearch(f, box, max_evals, eps=eps).run()
