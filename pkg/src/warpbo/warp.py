"""Learnable embedding of raw fidelity vectors.

A small sigmoid network (widths 2 -> 6 -> 2) maps a fidelity vector to a
warped representation so that a stationary kernel on the embedding can
express non-stationary covariance across fidelities.  Gradients with
respect to all 32 weights and to the input are computed by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["WarpParams", "warp_forward", "warp_jacobian", "warp_init", "N_WEIGHTS"]

WIDTHS = (2, 6, 2)
N_WEIGHTS = WIDTHS[1] * WIDTHS[0] + WIDTHS[1] + WIDTHS[2] * WIDTHS[1] + WIDTHS[2]  # 32


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


@dataclass(frozen=True)
class WarpParams:
    """Weights of the fidelity embedding network.

    ``enabled=False`` bypasses the network entirely: the embedding is the
    identity and all weight gradients vanish.
    """

    w1: np.ndarray  # (6, 2)
    b1: np.ndarray  # (6,)
    w2: np.ndarray  # (2, 6)
    b2: np.ndarray  # (2,)
    enabled: bool = True

    def __post_init__(self) -> None:
        shapes = {"w1": (6, 2), "b1": (6,), "w2": (2, 6), "b2": (2,)}
        for name, want in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != want:
                raise ValueError(f"{name} must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def to_flat(self) -> np.ndarray:
        """Flatten to 32 reals: W1 row-major, b1, W2 row-major, b2."""
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2.ravel(), self.b2]
        )

    @classmethod
    def from_flat(cls, flat: np.ndarray, enabled: bool = True) -> "WarpParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (N_WEIGHTS,):
            raise ValueError(f"expected {N_WEIGHTS} weights, got shape {flat.shape}")
        w1 = flat[0:12].reshape(6, 2)
        b1 = flat[12:18]
        w2 = flat[18:30].reshape(2, 6)
        b2 = flat[30:32]
        return cls(w1, b1, w2, b2, enabled=enabled)


def warp_init(seed: int, scale: float = 0.5, enabled: bool = True) -> WarpParams:
    """Weights drawn i.i.d. uniform in [-scale, scale]; deterministic per seed."""
    if scale < 0:
        raise ValueError(f"scale must be non-negative, got {scale}")
    rng = np.random.default_rng(seed)
    flat = rng.uniform(-scale, scale, size=N_WEIGHTS)
    return WarpParams.from_flat(flat, enabled=enabled)


def near_affine_reference() -> WarpParams:
    """Weights realizing an approximately affine, monotone embedding.

    Each output tracks its own input with slope ~1 through the center of
    the unit square (r ~ 0.5 + (z - 0.5) for central z), so a model using
    this warp behaves like a stationary kernel on raw fidelities.  Small
    weights do NOT achieve this (they collapse every fidelity near 0.5);
    this reference anchors warp regularization at the stationary model
    instead of the collapsed one.
    """
    w1 = np.zeros((6, 2))
    b1 = np.zeros(6)
    w1[:3, 0] = 2.0
    b1[:3] = -1.0
    w1[3:, 1] = 2.0
    b1[3:] = -1.0
    w2 = np.zeros((2, 6))
    w2[0, :3] = 8.0 / 3.0
    w2[1, 3:] = 8.0 / 3.0
    b2 = np.full(2, -4.0)  # centers the output: 8 * sigmoid(0) / 2
    return WarpParams(w1, b1, w2, b2)


def warp_forward(z: np.ndarray, w: WarpParams) -> np.ndarray:
    """Embed one fidelity vector; identity when the warp is disabled."""
    z = np.asarray(z, dtype=float)
    if z.shape != (2,):
        raise ValueError(f"fidelity vector must have shape (2,), got {z.shape}")
    if not w.enabled:
        return z.copy()
    h = _sigmoid(w.w1 @ z + w.b1)
    return _sigmoid(w.w2 @ h + w.b2)


def warp_batch(Z: np.ndarray, w: WarpParams) -> np.ndarray:
    """Row-wise ``warp_forward`` for a (T, 2) array of fidelity vectors."""
    Z = np.asarray(Z, dtype=float)
    if not w.enabled:
        return Z.copy()
    H = _sigmoid(Z @ w.w1.T + w.b1)
    return _sigmoid(H @ w.w2.T + w.b2)


def warp_jacobian(z: np.ndarray, w: WarpParams) -> tuple[np.ndarray, np.ndarray]:
    """Exact Jacobians of the embedding at ``z``.

    Returns ``(d_weights, d_input)`` with shapes (2, 32) and (2, 2); the
    weight columns follow the flat layout of ``WarpParams.to_flat``.
    Disabled warp: zero weight Jacobian and identity input Jacobian.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (2,):
        raise ValueError(f"fidelity vector must have shape (2,), got {z.shape}")
    if not w.enabled:
        return np.zeros((2, N_WEIGHTS)), np.eye(2)

    h = _sigmoid(w.w1 @ z + w.b1)  # (6,)
    r = _sigmoid(w.w2 @ h + w.b2)  # (2,)
    dr = r * (1.0 - r)  # sigmoid' at the output pre-activations
    dh = h * (1.0 - h)

    d_weights = np.zeros((2, N_WEIGHTS))
    # back through the output layer: dr_o/dW2[o,:] = dr_o * h, dr_o/db2[o] = dr_o
    for o in range(2):
        d_weights[o, 18 + 6 * o : 18 + 6 * (o + 1)] = dr[o] * h
        d_weights[o, 30 + o] = dr[o]
        # back through the hidden layer
        back = dr[o] * w.w2[o] * dh  # (6,)
        d_weights[o, 0:12] = np.outer(back, z).ravel()
        d_weights[o, 12:18] = back
    d_input = (dr[:, None] * w.w2) @ (dh[:, None] * w.w1)
    return d_weights, d_input


def warp_jacobian_batch(Z: np.ndarray, w: WarpParams) -> np.ndarray:
    """Weight Jacobians for each row of ``Z``; shape (T, 2, 32)."""
    Z = np.asarray(Z, dtype=float)
    T = Z.shape[0]
    if not w.enabled:
        return np.zeros((T, 2, N_WEIGHTS))
    out = np.empty((T, 2, N_WEIGHTS))
    for t in range(T):
        out[t], _ = warp_jacobian(Z[t], w)
    return out
