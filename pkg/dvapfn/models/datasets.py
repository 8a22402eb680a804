"""
Dataset records - one prior draw (inputs plus targets) and its CSV form.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd

from dvapfn.errors import ContractError, GenerationError


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SyntheticDataset:
    """Inputs X (N x d), targets y (N,) and the seed that produced them."""
    X: np.ndarray
    y: np.ndarray
    seed: int

    def __post_init__(self):
        X, y = _frozen(self.X), _frozen(self.y)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractError(f"dataset shapes X {X.shape}, y {y.shape} are inconsistent")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise GenerationError("dataset contains non-finite values", self.seed)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_points(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def head(self, n: int) -> "SyntheticDataset":
        return SyntheticDataset(self.X[:n], self.y[:n], self.seed)

    def tail(self, n: int) -> "SyntheticDataset":
        return SyntheticDataset(self.X[n:], self.y[n:], self.seed)

    def split(self, cutoff: int) -> Tuple["SyntheticDataset", "SyntheticDataset"]:
        """First ``cutoff`` rows and the remainder."""
        if not 0 < cutoff < self.n_points:
            raise ContractError(f"cutoff {cutoff} outside 1..{self.n_points - 1}")
        return self.head(cutoff), self.tail(cutoff)

    def take(self, rows) -> "SyntheticDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return SyntheticDataset(self.X[rows], self.y[rows], self.seed)

    # ==================== CSV ====================

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=[f"x{i}" for i in range(self.input_dim)])
        frame["y"] = self.y
        return frame

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: Union[str, Path], seed: int = 0) -> "SyntheticDataset":
        frame = pd.read_csv(path)
        inputs = [c for c in frame.columns if c != "y"]
        expected = [f"x{i}" for i in range(len(inputs))]
        if "y" not in frame.columns or inputs != expected:
            raise ContractError(f"dataset CSV header must be x0..x{{d-1}},y, got {list(frame.columns)}")
        return cls(frame[inputs].to_numpy(dtype=np.float64), frame["y"].to_numpy(dtype=np.float64), seed)
