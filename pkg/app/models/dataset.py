"""
In-memory datasets produced by the feedback-loop simulator
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.exceptions import InputError

# (day index, position) -> click-through rate
CtrTable = Dict[Tuple[int, int], float]


@dataclass
class Dataset:
    """
    Feature matrix, binary click labels and, for feedback-loop data, the
    per-row position CTR `b` and displayed position (1 or 2).
    """
    X: np.ndarray
    y: np.ndarray
    b: Optional[np.ndarray] = None
    position: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X.ndim != 2:
            raise InputError(f"X must be 2-D, got shape {self.X.shape}")
        n = self.X.shape[0]
        if self.y.shape[0] != n:
            raise InputError(f"X has {n} rows but y has {self.y.shape[0]}")
        if not np.all((self.y == 0.0) | (self.y == 1.0)):
            raise InputError("Labels must be 0 or 1")
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=np.float64).ravel()
            if self.b.shape[0] != n:
                raise InputError(f"X has {n} rows but b has {self.b.shape[0]}")
            if np.any((self.b < 0.0) | (self.b > 1.0)):
                raise InputError("Position CTR b must lie in [0, 1]")
        if self.position is not None:
            self.position = np.asarray(self.position, dtype=np.int64).ravel()
            if self.position.shape[0] != n:
                raise InputError(f"X has {n} rows but position has {self.position.shape[0]}")
            if not np.all((self.position == 1) | (self.position == 2)):
                raise InputError("Positions must be 1 or 2")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def click_rate(self) -> float:
        return float(self.y.mean()) if len(self) else 0.0

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            X=self.X[idx],
            y=self.y[idx],
            b=None if self.b is None else self.b[idx],
            position=None if self.position is None else self.position[idx],
        )

    @classmethod
    def empty(cls, n_features: int) -> "Dataset":
        return cls(X=np.empty((0, n_features)), y=np.empty(0))

    @classmethod
    def concat(cls, parts: List["Dataset"]) -> "Dataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise InputError("Nothing to concatenate")

        def _join(attr):
            values = [getattr(p, attr) for p in parts]
            if any(v is None for v in values):
                return None
            return np.concatenate(values)

        return cls(
            X=np.vstack([p.X for p in parts]),
            y=np.concatenate([p.y for p in parts]),
            b=_join("b"),
            position=_join("position"),
        )


@dataclass
class DayCtr:
    """Observed CTR per position on one simulated day"""
    day: int
    position1_ctr: float
    position2_ctr: float


@dataclass
class FeedbackLoopOutput:
    """
    Result of one feedback-loop simulation: the last two recorded days
    (with b attached), their position CTR table, the heldout RUS draw and
    the per-day CTR history.
    """
    topk_last: Dataset
    topk_prev: Dataset
    b_table: CtrTable
    heldout: Dataset
    last_day: int
    history: List[DayCtr] = field(default_factory=list)

    @property
    def prev_day(self) -> int:
        return self.last_day - 1

    @property
    def position1_ctr_last(self) -> float:
        """The b value fed to the Bypass network at inference time"""
        return self.b_table[(self.last_day, 1)]

    @property
    def position2_ctr_last(self) -> float:
        return self.b_table[(self.last_day, 2)]

    def fl_dataset(self) -> Dataset:
        """Training set: the last two recorded days"""
        return Dataset.concat([self.topk_prev, self.topk_last])

    def all_days_ctr(self) -> Tuple[float, float]:
        """Position CTRs averaged over every recorded day (days weigh equally)"""
        if not self.history:
            return float("nan"), float("nan")
        return (
            float(np.mean([d.position1_ctr for d in self.history])),
            float(np.mean([d.position2_ctr for d in self.history])),
        )
