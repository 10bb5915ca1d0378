"""Error metrics on denormalized predictions and seed aggregation."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


def _pair(Y, Yhat):
    Y = np.asarray(Y, dtype=np.float64).ravel()
    Yhat = np.asarray(Yhat, dtype=np.float64).ravel()
    if Y.size == 0:
        raise ConfigError("metrics need at least one observation")
    if Y.shape != Yhat.shape:
        raise ConfigError(f"length mismatch: {Y.size} observations, {Yhat.size} predictions")
    return Y, Yhat


def mse(Y, Yhat) -> float:
    Y, Yhat = _pair(Y, Yhat)
    d = Yhat - Y
    return float(np.mean(d * d))


def rmse(Y, Yhat) -> float:
    return math.sqrt(mse(Y, Yhat))


def nse(Y, Yhat) -> float:
    """Nash-Sutcliffe efficiency, ``1 - sum((Yhat - Y)^2) / sum((Y - mean(Y))^2)``."""
    Y, Yhat = _pair(Y, Yhat)
    dev = Y - Y.mean()
    denom = float(np.dot(dev, dev))
    if denom == 0.0:
        raise ConfigError("NSE is undefined for constant observations")
    err = Yhat - Y
    return 1.0 - float(np.dot(err, err)) / denom


def avg_step_rmse(residuals: np.ndarray) -> np.ndarray:
    """RMSE across windows at each within-window position; input is ``(n_windows, T)``."""
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] == 0:
        raise ConfigError(f"expected a non-empty (n_windows, T) matrix, got {r.shape}")
    return np.sqrt(np.mean(r * r, axis=0))


def avg_daily_rmse(residuals, doy, n_doy: int = 366) -> np.ndarray:
    """RMSE per day of year across years; days never seen come back as NaN."""
    r = np.asarray(residuals, dtype=np.float64).ravel()
    d = np.asarray(doy).ravel()
    if r.shape != d.shape:
        raise ConfigError("residuals and day-of-year labels differ in length")
    sums = np.bincount(d - 1, weights=r * r, minlength=n_doy)[:n_doy]
    counts = np.bincount(d - 1, minlength=n_doy)[:n_doy]
    out = np.full(n_doy, np.nan)
    seen = counts > 0
    out[seen] = np.sqrt(sums[seen] / counts[seen])
    return out


@dataclass
class EvalReport:
    rmse: float
    nse: float
    avg_step_rmse: np.ndarray
    avg_daily_rmse: np.ndarray
    strategy: str = ""
    variable: str = ""
    seed: int | None = None
    extra: dict = field(default_factory=dict)


def evaluate(pred, variable: str = "") -> EvalReport:
    """Metrics for a :class:`~rnnbatch.inference.PredictionSeries`."""
    Y, Yhat = pred.observed[:, 0], pred.predicted[:, 0]
    return EvalReport(
        rmse=rmse(Y, Yhat), nse=nse(Y, Yhat),
        avg_step_rmse=avg_step_rmse(pred.residual_matrix()),
        avg_daily_rmse=avg_daily_rmse(Yhat - Y, pred.doy),
        strategy=pred.strategy, variable=variable, seed=pred.seed,
    )


@dataclass
class Aggregate:
    mean: float
    std: float
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


def mean_std(values) -> Aggregate:
    # statistics works in exact arithmetic, so identical values give a std of exactly 0
    v = [float(x) for x in values]
    if not v:
        raise ConfigError("nothing to aggregate")
    std = statistics.stdev(v) if len(v) > 1 else 0.0
    return Aggregate(statistics.fmean(v), std, len(v))


def aggregate_seeds(reports: list[EvalReport]) -> dict:
    """Mean and sample std across seeds for each scalar metric, plus mean traces."""
    if not reports:
        raise ConfigError("need at least one report")
    return {
        "rmse": mean_std(r.rmse for r in reports),
        "nse": mean_std(r.nse for r in reports),
        "avg_step_rmse": np.mean([r.avg_step_rmse for r in reports], axis=0),
        "avg_daily_rmse": np.mean([r.avg_daily_rmse for r in reports], axis=0),
    }


def write_trace_csv(path: str | Path, index_name: str, traces: dict[str, np.ndarray], start: int = 1) -> None:
    """One row per index value, one column per labelled trace."""
    names = list(traces)
    n = len(next(iter(traces.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([index_name] + names)
        for i in range(n):
            w.writerow([i + start] + ["" if np.isnan(traces[k][i]) else repr(float(traces[k][i])) for k in names])
