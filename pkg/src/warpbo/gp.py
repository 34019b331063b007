"""Gaussian-process machinery over (design, fidelity) pairs.

Exact zero-mean GP regression with the factorized kernel: Cholesky
factorization with jitter escalation, posterior prediction, the negative
log marginal likelihood and its full analytic gradient (including the warp
weights via the chain rule), and joint posterior sampling.

All functions here work in the target space of the dataset they are given.
``fit(..., standardize=True)`` subtracts the mean and divides by the
standard deviation of the observed targets before conditioning and maps
predictions back, which is how the outer loop stabilizes hyperparameter
learning; the likelihood functions themselves never rescale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .data import Dataset
from .kernels import (
    ArbfParams,
    FactorizedKernelParams,
    FiniteRankParams,
    arbf_pairwise,
    cross_matrix,
    fidelity_pairwise,
    fidelity_representation,
    finite_rank_eval,
    gram_matrix,
)
from .warp import WarpParams, warp_jacobian_batch

__all__ = [
    "NumericalError",
    "ModelParams",
    "ModelState",
    "PosteriorGaussian",
    "fit",
    "posterior",
    "joint_posterior",
    "nlml",
    "nlml_grad",
    "nlml_value_and_grad",
    "sample_joint",
    "chol_with_jitter",
]

JITTER_LADDER = tuple(1e-10 * 10.0**k for k in range(7))  # 1e-10 .. 1e-4


class NumericalError(RuntimeError):
    """Cholesky factorization failed after exhausting the jitter ladder."""

    def __init__(self, message: str, jitters: Sequence[float] = ()):
        super().__init__(message)
        self.jitters = tuple(jitters)


def chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, escalating diagonal jitter on failure.

    Returns ``(L, jitter_used)`` or raises NumericalError carrying the
    attempted jitter sequence.
    """
    attempted: list[float] = []
    for jitter in (0.0,) + JITTER_LADDER:
        attempted.append(jitter)
        try:
            L = cholesky(K + jitter * np.eye(K.shape[0]), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
        except ValueError:
            break  # non-finite entries; escalating will not help
    raise NumericalError(
        f"Cholesky failed for a {K.shape[0]}x{K.shape[0]} matrix "
        f"after jitters {attempted}",
        jitters=attempted,
    )


@dataclass(frozen=True)
class PosteriorGaussian:
    mean: float
    variance: float


@dataclass(frozen=True)
class ModelParams:
    """Everything learnable: kernel hyperparameters, warp weights, noise."""

    kernel: FactorizedKernelParams
    warp: WarpParams
    noise_variance: float

    def __post_init__(self) -> None:
        if not self.noise_variance > 0:
            raise ValueError(f"noise_variance must be positive, got {self.noise_variance}")
        if isinstance(self.kernel.fidelity, FiniteRankParams) and self.warp.enabled:
            raise ValueError("finite-rank fidelity kernel requires a disabled warp")

    @property
    def fidelity_kind(self) -> str:
        return "arbf" if isinstance(self.kernel.fidelity, ArbfParams) else "finite_rank"

    @property
    def n_design_dims(self) -> int:
        return self.kernel.design.dim

    # -- flat vector codec for the hyperparameter optimizer ----------------

    def pack(self) -> np.ndarray:
        """Flatten to the optimizer's vector.

        Layout: log design signal variance, log design length scales,
        fidelity block (log ARBF length scales, or per-dim Cholesky factors
        (log L00, L10, log L11) of the finite-rank weights), log noise
        variance, then the 32 warp weights when the warp is enabled.
        """
        parts = [
            [math.log(self.kernel.design.signal_variance)],
            np.log(self.kernel.design.length_scales),
        ]
        fid = self.kernel.fidelity
        if isinstance(fid, ArbfParams):
            parts.append(np.log(fid.length_scales))
        else:
            for d in range(fid.dim):
                W = fid.basis_weights[d]
                try:
                    L = np.linalg.cholesky(W)
                except np.linalg.LinAlgError:
                    L = np.linalg.cholesky(W + 1e-10 * np.eye(2))
                parts.append([math.log(L[0, 0]), L[1, 0], math.log(L[1, 1])])
        parts.append([math.log(self.noise_variance)])
        if self.warp.enabled:
            parts.append(self.warp.to_flat())
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def unpack(self, vec: np.ndarray) -> "ModelParams":
        """Rebuild parameters with this instance's structure from a flat vector."""
        vec = np.asarray(vec, dtype=float)
        dx = self.n_design_dims
        design = ArbfParams(math.exp(vec[0]), np.exp(vec[1 : 1 + dx]))
        i = 1 + dx
        fid = self.kernel.fidelity
        if isinstance(fid, ArbfParams):
            fidelity: ArbfParams | FiniteRankParams = ArbfParams(
                1.0, np.exp(vec[i : i + fid.dim])
            )
            i += fid.dim
        else:
            mats = []
            for _ in range(fid.dim):
                L = np.array(
                    [[math.exp(vec[i]), 0.0], [vec[i + 1], math.exp(vec[i + 2])]]
                )
                mats.append(L @ L.T)
                i += 3
            fidelity = FiniteRankParams(np.array(mats))
        noise = math.exp(vec[i])
        i += 1
        if self.warp.enabled:
            warp = WarpParams.from_flat(vec[i : i + 32], enabled=True)
            i += 32
        else:
            warp = self.warp
        if i != vec.shape[0]:
            raise ValueError(f"parameter vector has length {vec.shape[0]}, expected {i}")
        return ModelParams(FactorizedKernelParams(design, fidelity), warp, noise)

    # -- JSON codec for checkpoints ----------------------------------------

    def to_dict(self) -> dict:
        fid = self.kernel.fidelity
        if isinstance(fid, ArbfParams):
            fid_doc = {"kind": "arbf", "length_scales": fid.length_scales.tolist()}
        else:
            fid_doc = {"kind": "finite_rank", "basis_weights": fid.basis_weights.tolist()}
        return {
            "design": {
                "signal_variance": self.kernel.design.signal_variance,
                "length_scales": self.kernel.design.length_scales.tolist(),
            },
            "fidelity": fid_doc,
            "noise_variance": self.noise_variance,
            "warp": {"enabled": self.warp.enabled, "weights": self.warp.to_flat().tolist()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        design = ArbfParams(
            doc["design"]["signal_variance"], np.array(doc["design"]["length_scales"])
        )
        fd = doc["fidelity"]
        if fd["kind"] == "arbf":
            fidelity: ArbfParams | FiniteRankParams = ArbfParams(
                1.0, np.array(fd["length_scales"])
            )
        else:
            fidelity = FiniteRankParams(np.array(fd["basis_weights"]))
        warp = WarpParams.from_flat(
            np.array(doc["warp"]["weights"]), enabled=doc["warp"]["enabled"]
        )
        return cls(FactorizedKernelParams(design, fidelity), warp, doc["noise_variance"])


@dataclass(frozen=True)
class ModelState:
    """Immutable fitted model: data views plus the Cholesky precomputation."""

    dataset: Dataset
    params: ModelParams
    X: np.ndarray  # (T, dx) designs
    Z: np.ndarray  # (T, 2) raw fidelities
    R: np.ndarray  # (T, 2) fidelity representations
    L: np.ndarray  # lower Cholesky of K + (noise + jitter) I
    alpha: np.ndarray  # (K + noise I + jitter I)^-1 y, standardized space
    jitter_used: float
    y_mean: float
    y_std: float

    @property
    def noise_variance_raw(self) -> float:
        """Observation-noise variance in the dataset's target units."""
        return self.params.noise_variance * self.y_std**2


def fit(dataset: Dataset, params: ModelParams, standardize: bool = False) -> ModelState:
    """Condition the GP on the dataset; Cholesky with jitter escalation."""
    if len(dataset) < 1:
        raise ValueError("fit requires at least one evaluation")
    y = dataset.targets()
    if standardize:
        y_mean = float(np.mean(y))
        std = float(np.std(y))
        y_std = std if std > 1e-12 else 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    y_s = (y - y_mean) / y_std

    K = gram_matrix(dataset, params.kernel, params.warp)
    L, jitter = chol_with_jitter(K + params.noise_variance * np.eye(len(dataset)))
    alpha = cho_solve((L, True), y_s)
    return ModelState(
        dataset=dataset,
        params=params,
        X=dataset.design_matrix(),
        Z=dataset.fidelity_matrix(),
        R=fidelity_representation(dataset.fidelity_matrix(), params.kernel, params.warp),
        L=L,
        alpha=alpha,
        jitter_used=jitter,
        y_mean=y_mean,
        y_std=y_std,
    )


def _self_variance(z: np.ndarray, params: ModelParams) -> float:
    fid = params.kernel.fidelity
    theta1 = params.kernel.design.signal_variance
    if isinstance(fid, ArbfParams):
        return theta1
    return theta1 * finite_rank_eval(z, z, fid)


def posterior(x: np.ndarray, z: np.ndarray, state: ModelState) -> PosteriorGaussian:
    """Posterior mean and (latent) variance at one unseen (x, z) pair."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    params = state.params
    rep = fidelity_representation(z[None, :], params.kernel, params.warp)
    k = (
        arbf_pairwise(x[None, :], state.X, params.kernel.design)
        * fidelity_pairwise(rep, state.R, params.kernel)
    )[0]
    mean_s = float(k @ state.alpha)
    v = solve_triangular(state.L, k, lower=True)
    var_s = max(_self_variance(z, params) - float(v @ v), 0.0)
    return PosteriorGaussian(
        mean=state.y_mean + state.y_std * mean_s,
        variance=state.y_std**2 * var_s,
    )


def joint_posterior(
    Xq: np.ndarray, Zq: np.ndarray, state: ModelState
) -> tuple[np.ndarray, np.ndarray]:
    """Joint posterior (mean vector, covariance matrix) at query rows."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    Zq = np.atleast_2d(np.asarray(Zq, dtype=float))
    params = state.params
    Rq = fidelity_representation(Zq, params.kernel, params.warp)
    Kc = cross_matrix(Xq, Rq, state.X, state.R, params.kernel)  # (m, T)
    Kss = cross_matrix(Xq, Rq, Xq, Rq, params.kernel)
    A = solve_triangular(state.L, Kc.T, lower=True)  # (T, m)
    mean_s = Kc @ state.alpha
    cov_s = Kss - A.T @ A
    cov_s = 0.5 * (cov_s + cov_s.T)
    return state.y_mean + state.y_std * mean_s, state.y_std**2 * cov_s


def sample_joint(
    points: Sequence[tuple[np.ndarray, np.ndarray]],
    state: ModelState,
    n_samples: int,
    seed: int,
) -> np.ndarray:
    """Exact joint posterior draws at the given (x, z) points.

    Returns an (n_samples, len(points)) array; deterministic per seed.
    """
    if len(points) < 1:
        raise ValueError("sample_joint requires at least one point")
    Xq = np.array([np.asarray(p[0], dtype=float) for p in points])
    Zq = np.array([np.asarray(p[1], dtype=float) for p in points])
    mean, cov = joint_posterior(Xq, Zq, state)
    Lc, _ = chol_with_jitter(cov)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n_samples, len(points)))
    return mean + xi @ Lc.T


# -- negative log marginal likelihood --------------------------------------


def nlml(dataset: Dataset, params: ModelParams) -> float:
    """0.5 y^T K_n^-1 y + 0.5 log|K_n| + (T/2) log 2pi over the raw targets."""
    return nlml_value_and_grad(dataset, params, need_grad=False)[0]


def nlml_grad(dataset: Dataset, params: ModelParams) -> np.ndarray:
    """Gradient of ``nlml`` in the ``ModelParams.pack`` coordinates."""
    return nlml_value_and_grad(dataset, params)[1]


def nlml_value_and_grad(
    dataset: Dataset, params: ModelParams, need_grad: bool = True
) -> tuple[float, np.ndarray | None]:
    if len(dataset) < 1:
        raise ValueError("nlml requires a non-empty dataset")
    T = len(dataset)
    y = dataset.targets()
    X = dataset.design_matrix()
    Z = dataset.fidelity_matrix()
    kernel = params.kernel
    design = kernel.design

    R = fidelity_representation(Z, kernel, params.warp)
    Kx = arbf_pairwise(X, X, design)
    Kz = fidelity_pairwise(R, R, kernel)
    K = Kx * Kz
    K = 0.5 * (K + K.T)
    L, jitter = chol_with_jitter(K + params.noise_variance * np.eye(T))
    alpha = cho_solve((L, True), y)
    value = float(
        0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * T * math.log(2.0 * math.pi)
    )
    if not need_grad:
        return value, None

    Kinv = cho_solve((L, True), np.eye(T))
    G = 0.5 * (Kinv - np.outer(alpha, alpha))  # dNLML/dK_n, symmetric

    blocks: list[np.ndarray] = []
    blocks.append(np.array([np.sum(G * K)]))  # d/d log theta1
    dx = design.dim
    lx = design.length_scales
    grad_lx = np.empty(dx)
    for d in range(dx):
        diff2 = (X[:, d, None] - X[None, :, d]) ** 2
        grad_lx[d] = np.sum(G * K * diff2) / lx[d] ** 2
    blocks.append(grad_lx)

    fid = kernel.fidelity
    if isinstance(fid, ArbfParams):
        lr = fid.length_scales
        grad_lr = np.empty(2)
        for d in range(2):
            diff2 = (R[:, d, None] - R[None, :, d]) ** 2
            grad_lr[d] = np.sum(G * K * diff2) / lr[d] ** 2
        blocks.append(grad_lr)
    else:
        W_mat = G * Kx
        for d in range(fid.dim):
            B = np.column_stack([np.ones(T), Z[:, d]])
            try:
                Lw = np.linalg.cholesky(fid.basis_weights[d])
            except np.linalg.LinAlgError:
                Lw = np.linalg.cholesky(fid.basis_weights[d] + 1e-10 * np.eye(2))
            grad_L = 2.0 * (B.T @ W_mat @ B) @ Lw
            blocks.append(
                np.array([grad_L[0, 0] * Lw[0, 0], grad_L[1, 0], grad_L[1, 1] * Lw[1, 1]])
            )

    blocks.append(np.array([params.noise_variance * np.trace(G)]))  # d/d log noise

    if params.warp.enabled:
        # chain rule through the warp: dK_ij/dw = sum_d dK_ij/dr_id J_i[d] + (i<->j)
        lr = fid.length_scales  # type: ignore[union-attr]  # arbf guaranteed with warp
        J = warp_jacobian_batch(Z, params.warp)  # (T, 2, 32)
        S = np.empty((T, 2))
        for d in range(2):
            diff = R[:, d, None] - R[None, :, d]
            S[:, d] = np.sum(G * (-K * diff / lr[d] ** 2), axis=1)
        grad_w = 2.0 * np.einsum("td,tdw->w", S, J)
        blocks.append(grad_w)

    return value, np.concatenate(blocks)
