"""Scoring of Gaussian beliefs against ground truth, and run aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .moments import GaussianBelief

LOG_2PI = math.log(2.0 * math.pi)
Z95 = 1.96


def metric_nll(belief: GaussianBelief, truth) -> float:
    """Negative log density of ``truth`` under ``belief``; ``inf`` if the
    covariance is singular."""
    truth = np.asarray(truth, dtype=float).reshape(-1)
    r = truth - belief.mean
    try:
        L = np.linalg.cholesky(belief.cov)
    except np.linalg.LinAlgError:
        return math.inf
    diag = np.diag(L)
    if np.any(diag <= 0):
        return math.inf
    y = np.linalg.solve(L, r) if r.size > 1 else r / diag
    return float(0.5 * (r.size * LOG_2PI + y @ y) + np.sum(np.log(diag)))


@dataclass(frozen=True)
class Summary:
    mean: float
    stderr95: float
    count: int


def summarize(values) -> Summary:
    """Mean and ``1.96 * sample std / sqrt(count)`` in one batch pass."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        return Summary(math.nan, math.nan, 0)
    mean = math.fsum(v) / n
    if n < 2:
        return Summary(mean, math.nan, n)
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return Summary(mean, Z95 * math.sqrt(var) / math.sqrt(n), n)


class StreamingStats:
    """Welford running mean/variance; agrees with :func:`summarize`."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (value - self.mean)

    def summary(self) -> Summary:
        if self.count == 0:
            return Summary(math.nan, math.nan, 0)
        if self.count < 2:
            return Summary(self.mean, math.nan, 1)
        sd = math.sqrt(self._m2 / (self.count - 1))
        return Summary(self.mean, Z95 * sd / math.sqrt(self.count), self.count)


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated scores of one estimator over ``runs`` runs."""

    estimator: str
    rmse: float
    mae: float
    nll: float
    stderr_95: dict
    runs: int
    failures: int = 0

    @property
    def completion_rate(self) -> float:
        total = self.runs + self.failures
        return self.runs / total if total else math.nan
