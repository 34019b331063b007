"""Selection criteria for the next (design, fidelity) evaluation.

The main acquisition scores a candidate by the expected reduction in the
entropy of the target-fidelity maximizer's location, per unit evaluation
cost.  The maximizer distribution is discretized over representer points;
its entropy is estimated from the argmax of joint posterior samples, and
the post-evaluation entropy is averaged over fantasy outcomes drawn from
the posterior predictive, each applied as a rank-one posterior update with
hyperparameters frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np
from scipy.stats import norm

from .globalopt import direct_maximize, lhs_sample
from .gp import ModelState, chol_with_jitter, joint_posterior, posterior
from .objectives import CostModel
from .seeding import stable_seed

__all__ = [
    "AcqConfig",
    "sample_representers",
    "pmin_entropy",
    "es_per_cost",
    "expected_improvement",
    "fantasy_posterior",
]

REPRESENTER_STRATEGIES = ("lhs", "posterior-weighted", "thompson")


@dataclass(frozen=True)
class AcqConfig:
    n_representers: int = 20
    n_mc: int = 128
    n_fantasies: int = 10
    representer_strategy: str = "posterior-weighted"
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_representers", "n_mc", "n_fantasies"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.representer_strategy not in REPRESENTER_STRATEGIES:
            raise ValueError(
                f"representer_strategy must be one of {REPRESENTER_STRATEGIES}, "
                f"got {self.representer_strategy!r}"
            )


def sample_representers(
    state: ModelState, target_fidelity: np.ndarray, cfg: AcqConfig
) -> np.ndarray:
    """Design points discretizing the support of the target maximizer.

    ``lhs`` space-fills the design box; ``posterior-weighted`` draws ten
    times as many LHS candidates and keeps those with the highest posterior
    mean plus standard deviation at the target fidelity; ``thompson`` draws
    one joint posterior sample per representer over a large candidate set
    and keeps each sample's argmax, so the set concentrates exactly as fast
    as the model's own maximizer uncertainty shrinks.  Deterministic per
    ``cfg.seed``; returns an (n_representers, dx) array.
    """
    box = state.dataset.design_box
    seed = stable_seed(cfg.seed, "representers")
    target = np.asarray(target_fidelity, dtype=float)
    if cfg.representer_strategy == "lhs":
        return lhs_sample(cfg.n_representers, box, seed)
    if cfg.representer_strategy == "posterior-weighted":
        candidates = lhs_sample(10 * cfg.n_representers, box, seed)
        Zq = np.tile(target, (candidates.shape[0], 1))
        mean, cov = joint_posterior(candidates, Zq, state)
        score = mean + np.sqrt(np.clip(np.diag(cov), 0.0, None))
        keep = np.argsort(-score, kind="stable")[: cfg.n_representers]
        return candidates[np.sort(keep)]
    # Space-filling candidates plus the observed designs and the polished
    # posterior-mean argmax, so the grid resolution near the incumbent peak
    # improves as evaluations accumulate there.
    base = lhs_sample(max(256, 10 * cfg.n_representers), box, seed)
    x_hat, _ = direct_maximize(
        lambda xv: posterior(xv, target, state).mean, box, max_evals=128
    )
    candidates = np.vstack([base, state.X, x_hat[None, :]])
    n_candidates = candidates.shape[0]
    mean, cov = joint_posterior(candidates, np.tile(target, (n_candidates, 1)), state)
    L, _ = chol_with_jitter(cov)
    rng = np.random.default_rng(stable_seed(seed, "thompson"))
    samples = mean + rng.standard_normal((cfg.n_representers, n_candidates)) @ L.T
    return candidates[np.argmax(samples, axis=1)]


def _canonical_order(X: np.ndarray) -> np.ndarray:
    """Row order independent of input permutation (lexicographic)."""
    return np.lexsort(X.T[::-1])


def _argmax_entropy(samples: np.ndarray, m: int) -> float:
    """Shannon entropy (nats) of the empirical argmax distribution."""
    counts = np.bincount(np.argmax(samples, axis=1), minlength=m)
    p = counts[counts > 0] / samples.shape[0]
    return float(-np.sum(p * np.log(p)))


def pmin_entropy(
    state: ModelState,
    representers: np.ndarray,
    target_fidelity: np.ndarray,
    n_mc: int,
    seed: int,
) -> float:
    """Entropy of the maximizer location restricted to the representers.

    Draws ``n_mc`` joint posterior samples at the representers (at the
    target fidelity) and returns the Shannon entropy of the argmax
    frequencies, in nats; always within [0, log(#representers)].
    """
    X = np.atleast_2d(np.asarray(representers, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("pmin_entropy requires at least 2 representers")
    X = X[_canonical_order(X)]
    m = X.shape[0]
    Zq = np.tile(np.asarray(target_fidelity, dtype=float), (m, 1))
    mean, cov = joint_posterior(X, Zq, state)
    L, _ = chol_with_jitter(cov)
    rng = np.random.default_rng(stable_seed(seed, "pmin"))
    samples = mean + rng.standard_normal((n_mc, m)) @ L.T
    return _argmax_entropy(samples, m)


def fantasy_posterior(
    state: ModelState,
    representers: np.ndarray,
    target_fidelity: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
    y_fantasies: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior over the representers after observing fantasies at (x, z).

    Rank-one conditioning of the joint posterior on a noisy observation at
    the candidate; hyperparameters stay frozen.  Returns the per-fantasy
    means (F, m) and the shared updated covariance (m, m), which does not
    depend on the observed value.
    """
    X = np.atleast_2d(np.asarray(representers, dtype=float))
    m = X.shape[0]
    Xq = np.vstack([X, np.asarray(x, dtype=float)[None, :]])
    Zq = np.vstack(
        [
            np.tile(np.asarray(target_fidelity, dtype=float), (m, 1)),
            np.asarray(z, dtype=float)[None, :],
        ]
    )
    mean, cov = joint_posterior(Xq, Zq, state)
    predictive_var = max(cov[m, m] + state.noise_variance_raw, 1e-300)
    gain = cov[:m, m] / predictive_var
    cov_new = cov[:m, :m] - np.outer(cov[:m, m], cov[:m, m]) / predictive_var
    cov_new = 0.5 * (cov_new + cov_new.T)
    y_fantasies = np.atleast_1d(np.asarray(y_fantasies, dtype=float))
    means = mean[:m] + np.outer(y_fantasies - mean[m], gain)
    return means, cov_new


def es_per_cost(
    x: np.ndarray,
    z: np.ndarray,
    state: ModelState,
    cost_model: CostModel,
    cfg: AcqConfig,
    representers: np.ndarray | None = None,
) -> float:
    """Expected maximizer-entropy reduction per evaluation cost at (x, z).

    Monte Carlo estimate with common random numbers: the same standard
    normal draws realize the base and every fantasy-conditioned entropy, so
    the estimated reduction is low-variance.  Deterministic given
    ``cfg.seed``; the seed is combined with (x, z) so candidates can be
    scored concurrently in any order.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    cost = cost_model.cost(z)
    if cost <= 0:
        raise ValueError(f"evaluation cost must be positive, got {cost}")
    target = state.dataset.target_fidelity
    if representers is None:
        representers = sample_representers(state, target, cfg)
    X = np.atleast_2d(np.asarray(representers, dtype=float))
    X = X[_canonical_order(X)]
    m = X.shape[0]

    Xq = np.vstack([X, x[None, :]])
    Zq = np.vstack([np.tile(target, (m, 1)), z[None, :]])
    mean, cov = joint_posterior(Xq, Zq, state)
    predictive_var = max(cov[m, m] + state.noise_variance_raw, 1e-300)
    gain = cov[:m, m] / predictive_var
    cov_f = cov[:m, :m] - np.outer(cov[:m, m], cov[:m, m]) / predictive_var
    cov_f = 0.5 * (cov_f + cov_f.T)

    L_base, _ = chol_with_jitter(cov[:m, :m])
    L_f, _ = chol_with_jitter(cov_f)
    rng = np.random.default_rng(stable_seed(cfg.seed, "es", x, z))
    xi = rng.standard_normal((cfg.n_mc, m))
    h_base = _argmax_entropy(mean[:m] + xi @ L_base.T, m)

    fantasy_y = mean[m] + math.sqrt(predictive_var) * rng.standard_normal(cfg.n_fantasies)
    base_f = xi @ L_f.T
    h_fantasy = 0.0
    for y_f in fantasy_y:
        mean_f = mean[:m] + gain * (y_f - mean[m])
        h_fantasy += _argmax_entropy(mean_f + base_f, m)
    h_fantasy /= cfg.n_fantasies
    return (h_base - h_fantasy) / cost


def expected_improvement(
    x: np.ndarray,
    state: ModelState,
    best_y: float,
    z: np.ndarray | None = None,
) -> float:
    """Closed-form expected improvement over ``best_y`` at the target fidelity."""
    target = state.dataset.target_fidelity if z is None else np.asarray(z, dtype=float)
    post = posterior(np.asarray(x, dtype=float), target, state)
    sd = math.sqrt(max(post.variance, 0.0))
    if sd < 1e-15:
        return max(post.mean - best_y, 0.0)
    t = (post.mean - best_y) / sd
    return float(sd * (t * norm.cdf(t) + norm.pdf(t)))
