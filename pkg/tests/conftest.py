"""Shared builders for model and dataset fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from warpbo.data import Dataset, EvaluationRecord
from warpbo.globalopt import Box
from warpbo.gp import ModelParams
from warpbo.kernels import ArbfParams, FactorizedKernelParams, FiniteRankParams
from warpbo.warp import warp_init

TARGET = np.array([1.0, 1.0])


def make_dataset(
    n: int,
    design_dim: int = 2,
    seed: int = 0,
    y_fn=None,
    at_target: bool = False,
) -> Dataset:
    """Random dataset in the unit boxes; targets from y_fn or standard normal."""
    rng = np.random.default_rng(seed)
    ds = Dataset(Box.unit(design_dim), Box.unit(2), TARGET.copy())
    for t in range(n):
        x = rng.uniform(size=design_dim)
        z = TARGET.copy() if at_target else rng.uniform(size=2)
        y = float(y_fn(x, z)) if y_fn is not None else float(rng.normal())
        ds.append(EvaluationRecord(x, z, y, 0.5, t))
    return ds


def make_params(
    design_dim: int = 2,
    signal: float = 1.5,
    noise: float = 0.01,
    warp_enabled: bool = True,
    warp_seed: int = 5,
    fidelity: str = "arbf",
    length_scales=None,
) -> ModelParams:
    ls = np.full(design_dim, 0.5) if length_scales is None else np.asarray(length_scales)
    design = ArbfParams(signal, ls)
    if fidelity == "arbf":
        fid = ArbfParams(1.0, np.array([0.7, 0.4]))
    else:
        fid = FiniteRankParams(
            np.array([[[1.0, 0.2], [0.2, 0.8]], [[0.5, -0.1], [-0.1, 1.2]]])
        )
        warp_enabled = False
    return ModelParams(
        FactorizedKernelParams(design, fid),
        warp_init(warp_seed, 0.5, enabled=warp_enabled),
        noise,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
