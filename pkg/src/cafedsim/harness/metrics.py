"""Run-level accuracy metrics: maximum, time average and second-half spread."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ParameterError


@dataclass(frozen=True)
class RunMetrics:
    max_accuracy: float
    mean_accuracy: float
    std_second_half: float
    n_rounds: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunMetrics":
        return cls(float(d["max_accuracy"]), float(d["mean_accuracy"]), float(d["std_second_half"]), int(d["n_rounds"]))


def second_half(series) -> np.ndarray:
    """Rounds ceil(T/2) + 1 .. T (1-based)."""
    a = np.asarray(series, dtype=float)
    return a[-(-a.size // 2) :]


def compute_metrics(accuracies) -> RunMetrics:
    """Max, mean over all rounds and population std over the second half."""
    a = np.asarray(accuracies, dtype=float)
    if a.ndim != 1 or a.size < 2:
        raise ParameterError("at least two rounds of accuracy are required")
    return RunMetrics(float(a.max()), float(a.mean()), float(np.std(second_half(a))), int(a.size))


def running_average(series) -> np.ndarray:
    a = np.asarray(series, dtype=float)
    return np.cumsum(a) / np.arange(1, a.size + 1)


def average_metrics(runs) -> RunMetrics:
    """Seed-average of several RunMetrics (field-wise mean)."""
    runs = list(runs)
    if not runs:
        raise ParameterError("no runs to average")
    return RunMetrics(
        float(np.mean([r.max_accuracy for r in runs])),
        float(np.mean([r.mean_accuracy for r in runs])),
        float(np.mean([r.std_second_half for r in runs])),
        runs[0].n_rounds,
    )
