"""
Result records written by training, evaluation and diagnostics.

Each record knows its CSV columns; the column order is fixed so diffs between
runs stay reviewable.
"""
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd


@dataclass
class Metrics:
    """Point-prediction error over one test suite."""
    mse: float
    mae: float
    max_err: float
    n_test: int
    wall_seconds: float

    @classmethod
    def from_errors(cls, errors: np.ndarray, wall_seconds: float = 0.0) -> "Metrics":
        errors = np.asarray(errors, dtype=np.float64).reshape(-1)
        if errors.size == 0:
            return cls(0.0, 0.0, 0.0, 0, wall_seconds)
        abs_err = np.abs(errors)
        return cls(
            mse=float(np.mean(errors ** 2)),
            mae=float(np.mean(abs_err)),
            max_err=float(np.max(abs_err)),
            n_test=int(errors.size),
            wall_seconds=float(wall_seconds),
        )


@dataclass
class CoverageReport:
    """Fraction of targets inside mean +/- {0.1, 1, 2} sigma bands."""
    model: str
    within_0_1_sigma: float
    within_1_sigma: float
    within_2_sigma: float
    n_test: int

    @property
    def fractions(self) -> List[float]:
        return [self.within_0_1_sigma, self.within_1_sigma, self.within_2_sigma]


@dataclass
class LocalityProfile:
    """Every (distance, weight) pair of one attention layer, per head."""
    layer: int
    heads: List[int] = field(default_factory=list)
    distances: List[float] = field(default_factory=list)
    weights: List[float] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "layer": [self.layer] * len(self.distances),
            "head": self.heads,
            "distance": self.distances,
            "weight": self.weights,
        })

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass
class TrainLogRow:
    step: int
    cumulative_train_points: int
    train_nll: float
    val_nll: float
    wall_seconds: float
    throughput_points_per_sec: float
    clipped_steps: int = 0


# Wall-clock columns live in their own file so the main log stays bitwise reproducible.
DETERMINISTIC_COLUMNS = ["step", "cumulative_train_points", "train_nll", "val_nll", "clipped_steps"]
TIMING_COLUMNS = ["step", "wall_seconds", "throughput_points_per_sec"]


@dataclass
class TrainLog:
    """Per-epoch training record."""
    rows: List[TrainLogRow] = field(default_factory=list)

    def append(self, row: TrainLogRow) -> None:
        self.rows.append(row)

    def to_frame(self) -> pd.DataFrame:
        columns = [f.name for f in fields(TrainLogRow)]
        return pd.DataFrame([asdict(r) for r in self.rows], columns=columns)

    def write(self, log_path: Union[str, Path], timing_path: Union[str, Path]) -> None:
        frame = self.to_frame()
        frame[DETERMINISTIC_COLUMNS].to_csv(log_path, index=False, float_format="%.17g")
        frame[TIMING_COLUMNS].to_csv(timing_path, index=False, float_format="%.6g")

    @property
    def val_nlls(self) -> List[float]:
        return [r.val_nll for r in self.rows]

    @property
    def best_val_nll(self) -> float:
        return min(self.val_nlls) if self.rows else float("inf")


def write_records(records: list, path: Union[str, Path]) -> None:
    """Write a list of dataclass records as one CSV in field order."""
    if not records:
        pd.DataFrame().to_csv(path, index=False)
        return
    columns = [f.name for f in fields(records[0])]
    pd.DataFrame([asdict(r) for r in records], columns=columns).to_csv(path, index=False, float_format="%.17g")


@dataclass
class MetricsRow:
    """One line of metrics.csv / context_sweep.csv."""
    model: str
    n_context: int
    k: int
    mse: float
    mae: float
    max_err: float
    n_test: int
    wall_seconds: float

    @classmethod
    def from_metrics(cls, model: str, n_context: int, metrics: Metrics, k: int = 0) -> "MetricsRow":
        """``k`` is the post-hoc filter size, 0 for the unfiltered context."""
        return cls(model, n_context, k, metrics.mse, metrics.mae, metrics.max_err, metrics.n_test, metrics.wall_seconds)


@dataclass
class TimingRow:
    label: str
    attention: str
    backbone: str
    n_context: int
    seconds_per_step: float


METRICS_COLUMNS = ["model", "n_context", "k", "mse", "mae", "max_err", "n_test"]
METRICS_TIMING_COLUMNS = ["model", "n_context", "k", "wall_seconds"]


def write_metrics(rows: List[MetricsRow], path: Union[str, Path], timing_path: Union[str, Path]) -> None:
    """Errors to ``path``; wall-clock seconds to ``timing_path``."""
    frame = pd.DataFrame([asdict(r) for r in rows], columns=[f.name for f in fields(MetricsRow)])
    frame[METRICS_COLUMNS].to_csv(path, index=False, float_format="%.17g")
    frame[METRICS_TIMING_COLUMNS].to_csv(timing_path, index=False, float_format="%.6g")


@dataclass
class AblationRow:
    sweep: str
    value: str
    n_params: int
    final_val_nll: float
    best_val_nll: float


@dataclass
class LocalitySummaryRow:
    """Head-averaged locality statistics at one context size, averaged over datasets."""
    layer: int
    n_context: int
    spearman: float
    far_mass: float
    datasets: int
