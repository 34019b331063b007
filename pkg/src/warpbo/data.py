"""Evaluation records, datasets, and budget accounting for the search loop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .globalopt import Box

__all__ = ["EvaluationRecord", "Dataset", "BudgetLedger", "RunResult", "METHOD_TAGS"]

METHOD_TAGS = ("nfw", "boca", "fabolas", "single_fidelity_bo", "random")
MULTI_FIDELITY_TAGS = ("nfw", "boca", "fabolas")


@dataclass(frozen=True)
class EvaluationRecord:
    """One observed evaluation of the objective at (x, z)."""

    x: np.ndarray
    z: np.ndarray
    y: float
    cost: float
    seed: int
    wall_seconds: float = 0.0

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        x.flags.writeable = False
        z.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if not np.isfinite(self.y):
            raise ValueError(f"observed value must be finite, got {self.y}")
        if not self.cost > 0:
            raise ValueError(f"cost must be positive, got {self.cost}")
        if self.wall_seconds < 0:
            raise ValueError("wall_seconds must be non-negative")


@dataclass
class Dataset:
    """Ordered evaluation history plus the search domain and target fidelity."""

    design_box: Box
    fidelity_box: Box
    target_fidelity: np.ndarray
    records: list[EvaluationRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        zt = np.asarray(self.target_fidelity, dtype=float)
        if not self.fidelity_box.contains(zt):
            raise ValueError("target fidelity lies outside the fidelity box")
        object.__setattr__(self, "target_fidelity", zt)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EvaluationRecord) -> None:
        if not self.design_box.contains(record.x, atol=1e-12):
            raise ValueError(f"design point {record.x} outside the design box")
        if not self.fidelity_box.contains(record.z, atol=1e-12):
            raise ValueError(f"fidelity vector {record.z} outside the fidelity box")
        self.records.append(record)

    def design_matrix(self) -> np.ndarray:
        return np.array([r.x for r in self.records], dtype=float).reshape(
            len(self.records), self.design_box.dim
        )

    def fidelity_matrix(self) -> np.ndarray:
        return np.array([r.z for r in self.records], dtype=float).reshape(
            len(self.records), self.fidelity_box.dim
        )

    def targets(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=float)

    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records], dtype=float)

    def with_targets(self, values: Sequence[float]) -> "Dataset":
        """Copy of this dataset with the observed values replaced."""
        if len(values) != len(self.records):
            raise ValueError("one replacement value per record required")
        records = [replace(r, y=float(v)) for r, v in zip(self.records, values)]
        return Dataset(self.design_box, self.fidelity_box, self.target_fidelity, records)


@dataclass
class BudgetLedger:
    """Cumulative cost accounting against a total budget."""

    budget: float
    spent: float = 0.0

    def __post_init__(self) -> None:
        if not self.budget > 0:
            raise ValueError(f"budget must be positive, got {self.budget}")

    def charge(self, cost: float) -> None:
        if not cost > 0:
            raise ValueError(f"cost must be positive, got {cost}")
        self.spent += cost

    def affordable(self, cost: float) -> bool:
        return self.spent + cost <= self.budget


@dataclass
class RunResult:
    """Outcome of one budgeted optimization run."""

    method_tag: str
    best_x: np.ndarray | None
    best_y_target: float | None
    trace: list[tuple[float, float | None]]
    final_dataset: Dataset
    spent: float
    budget: float
    seed: int
    fallback_used: bool = False
    failed: bool = False
    failure_message: str | None = None
