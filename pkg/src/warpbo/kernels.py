"""Covariance functions over design space, fidelity space, and their product.

The anisotropic RBF kernel carries the model's magnitude through its design
factor; the fidelity factor is either a unit-magnitude anisotropic RBF on
warped fidelities or a finite-rank kernel of linear basis functions on raw
fidelities.  Analytic gradients with respect to hyperparameters (in log
space) and inputs back the marginal-likelihood optimization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from .warp import WarpParams, warp_batch

if TYPE_CHECKING:
    from .data import Dataset

__all__ = [
    "ArbfParams",
    "FiniteRankParams",
    "FactorizedKernelParams",
    "arbf_eval",
    "arbf_grad_params",
    "arbf_grad_input",
    "factorized_eval",
    "finite_rank_eval",
    "gram_matrix",
    "arbf_pairwise",
    "finite_rank_pairwise",
]


@dataclass(frozen=True)
class ArbfParams:
    """Anisotropic RBF kernel: magnitude plus one length scale per dimension."""

    signal_variance: float
    length_scales: np.ndarray

    def __post_init__(self) -> None:
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if ls.ndim != 1 or not np.all(ls > 0):
            raise ValueError("length_scales must be a vector of positive reals")
        ls.flags.writeable = False
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))

    @property
    def dim(self) -> int:
        return self.length_scales.shape[0]


@dataclass(frozen=True)
class FiniteRankParams:
    """Finite-rank fidelity kernel: one 2x2 PSD weight matrix per fidelity dim.

    The basis per scalar fidelity component s is (1, s), so each summand is
    basis(s)^T W_d basis(s') and the kernel is PSD by construction.
    """

    basis_weights: np.ndarray  # (n_dims, 2, 2)

    def __post_init__(self) -> None:
        W = np.asarray(self.basis_weights, dtype=float)
        if W.ndim != 3 or W.shape[1:] != (2, 2):
            raise ValueError(f"basis_weights must have shape (d, 2, 2), got {W.shape}")
        for d in range(W.shape[0]):
            if not np.allclose(W[d], W[d].T, atol=1e-12):
                raise ValueError(f"basis_weights[{d}] is not symmetric")
            if np.linalg.eigvalsh(W[d]).min() < -1e-10:
                raise ValueError(f"basis_weights[{d}] is not positive semidefinite")
        W.flags.writeable = False
        object.__setattr__(self, "basis_weights", W)

    @property
    def dim(self) -> int:
        return self.basis_weights.shape[0]


FidelityKernel = Union[ArbfParams, FiniteRankParams]


@dataclass(frozen=True)
class FactorizedKernelParams:
    """Product kernel k_x * k_z over (design, fidelity-representation) pairs.

    The fidelity factor's magnitude is pinned: an ARBF fidelity kernel must
    have signal_variance exactly 1 so the product's magnitude lives only in
    the design factor.
    """

    design: ArbfParams
    fidelity: FidelityKernel

    def __post_init__(self) -> None:
        if isinstance(self.fidelity, ArbfParams) and self.fidelity.signal_variance != 1.0:
            raise ValueError(
                "fidelity ARBF signal_variance must be exactly 1 "
                f"(got {self.fidelity.signal_variance})"
            )


def _check_dims(a: np.ndarray, b: np.ndarray, p: ArbfParams) -> tuple[np.ndarray, np.ndarray]:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.shape != (p.dim,):
        raise ValueError(
            f"input dimensions {a.shape}, {b.shape} do not match kernel dimension ({p.dim},)"
        )
    return a, b


def arbf_eval(a: np.ndarray, b: np.ndarray, p: ArbfParams) -> float:
    """theta1 * exp(-1/2 * sum_i ((a_i - b_i) / l_i)^2)."""
    a, b = _check_dims(a, b, p)
    q = np.sum(((a - b) / p.length_scales) ** 2)
    return float(p.signal_variance * np.exp(-0.5 * q))


def arbf_grad_params(a: np.ndarray, b: np.ndarray, p: ArbfParams) -> np.ndarray:
    """Gradient of arbf_eval over (log theta1, log l_1..log l_d)."""
    a, b = _check_dims(a, b, p)
    k = arbf_eval(a, b, p)
    grad = np.empty(1 + p.dim)
    grad[0] = k
    grad[1:] = k * ((a - b) / p.length_scales) ** 2
    return grad


def arbf_grad_input(a: np.ndarray, b: np.ndarray, p: ArbfParams) -> np.ndarray:
    """Gradient of arbf_eval with respect to the first argument."""
    a, b = _check_dims(a, b, p)
    k = arbf_eval(a, b, p)
    return -k * (a - b) / p.length_scales**2


def finite_rank_eval(z: np.ndarray, z2: np.ndarray, p: FiniteRankParams) -> float:
    """Sum over fidelity dims of basis(z_d)^T W_d basis(z2_d), basis(s) = (1, s)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    if z.shape != (p.dim,) or z2.shape != (p.dim,):
        raise ValueError(f"fidelity inputs must have shape ({p.dim},)")
    total = 0.0
    for d in range(p.dim):
        b1 = np.array([1.0, z[d]])
        b2 = np.array([1.0, z2[d]])
        total += float(b1 @ p.basis_weights[d] @ b2)
    return total


def factorized_eval(
    x: np.ndarray,
    r: np.ndarray,
    x2: np.ndarray,
    r2: np.ndarray,
    p: FactorizedKernelParams,
) -> float:
    """Product of the design factor at (x, x2) and the fidelity factor at (r, r2).

    ``r`` is the fidelity representation: warped fidelity for an ARBF
    factor, raw fidelity for the finite-rank factor.
    """
    kx = arbf_eval(x, x2, p.design)
    if isinstance(p.fidelity, ArbfParams):
        kz = arbf_eval(r, r2, p.fidelity)
    else:
        kz = finite_rank_eval(r, r2, p.fidelity)
    return kx * kz


# -- vectorized building blocks -------------------------------------------


def arbf_pairwise(A: np.ndarray, B: np.ndarray, p: ArbfParams) -> np.ndarray:
    """Kernel matrix between row sets A (n, d) and B (m, d)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    diff = A[:, None, :] - B[None, :, :]
    q = np.sum((diff / p.length_scales) ** 2, axis=2)
    return p.signal_variance * np.exp(-0.5 * q)


def finite_rank_pairwise(Z1: np.ndarray, Z2: np.ndarray, p: FiniteRankParams) -> np.ndarray:
    Z1 = np.asarray(Z1, dtype=float)
    Z2 = np.asarray(Z2, dtype=float)
    out = np.zeros((Z1.shape[0], Z2.shape[0]))
    for d in range(p.dim):
        B1 = np.column_stack([np.ones(Z1.shape[0]), Z1[:, d]])
        B2 = np.column_stack([np.ones(Z2.shape[0]), Z2[:, d]])
        out += B1 @ p.basis_weights[d] @ B2.T
    return out


def fidelity_pairwise(R1: np.ndarray, R2: np.ndarray, p: FactorizedKernelParams) -> np.ndarray:
    if isinstance(p.fidelity, ArbfParams):
        return arbf_pairwise(R1, R2, p.fidelity)
    return finite_rank_pairwise(R1, R2, p.fidelity)


def cross_matrix(
    X1: np.ndarray,
    R1: np.ndarray,
    X2: np.ndarray,
    R2: np.ndarray,
    p: FactorizedKernelParams,
) -> np.ndarray:
    """Factorized kernel matrix between two sets of (design, representation) rows."""
    return arbf_pairwise(X1, X2, p.design) * fidelity_pairwise(R1, R2, p)


def gram_matrix(dataset: "Dataset", kernel: FactorizedKernelParams, warp: WarpParams) -> np.ndarray:
    """Noise-free T x T Gram matrix over the dataset's (x, z) pairs.

    Fidelity vectors are passed through the warp before entering an ARBF
    fidelity factor; the finite-rank factor consumes raw fidelities (the
    warp must be disabled for it).
    """
    if len(dataset) == 0:
        raise ValueError("gram_matrix requires a non-empty dataset")
    X = dataset.design_matrix()
    R = fidelity_representation(dataset.fidelity_matrix(), kernel, warp)
    K = cross_matrix(X, R, X, R, kernel)
    return 0.5 * (K + K.T)  # exact symmetry against rounding


def fidelity_representation(
    Z: np.ndarray, kernel: FactorizedKernelParams, warp: WarpParams
) -> np.ndarray:
    """Fidelity rows as consumed by the fidelity factor of ``kernel``."""
    if isinstance(kernel.fidelity, FiniteRankParams):
        if warp.enabled:
            raise ValueError("finite-rank fidelity kernel requires a disabled warp")
        return np.asarray(Z, dtype=float)
    return warp_batch(Z, warp)
