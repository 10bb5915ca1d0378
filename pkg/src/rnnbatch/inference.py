"""Test-time prediction: independent, state-chained, initial-value-chained
and fully autoregressive inference over a normalized split.

Every mode walks non-overlapping windows of length ``T`` so each day is
scored once. When the split length is not a multiple of ``T`` the leftover
days are covered by one extra full window ending on the last day (only its
unscored tail is kept); state-chained inference instead runs the tail as a
short continuation of the chain.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .data import TimeSeriesDataset, append_feature, denorm_targets
from .errors import ConfigError
from .gru import GruModel, autoregressive_forward, forward


@dataclass
class PredictionSeries:
    """Per-day predictions on one split.

    ``y_norm`` is in the model's normalized target space; ``predicted`` and
    ``observed`` are in original units. ``step`` is the within-window
    position (0-based) each day was predicted at.
    """

    y_norm: np.ndarray
    predicted: np.ndarray
    observed: np.ndarray
    doy: np.ndarray
    step: np.ndarray
    window_starts: list[int]
    T: int
    strategy: str = ""
    seed: int | None = None
    start: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y_norm)

    def residual_matrix(self) -> np.ndarray:
        """``(n_windows, T)`` residuals in original units over full windows only."""
        n_full = len(self.y_norm) // self.T
        r = (self.predicted - self.observed)[: n_full * self.T, 0]
        return r.reshape(n_full, self.T)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "observed", "predicted", "strategy", "seed"])
            year = self.start // 366
            for i in range(len(self)):
                if i and self.doy[i] <= self.doy[i - 1]:
                    year += 1
                w.writerow([f"{year + 1:04d}-{int(self.doy[i]):03d}", repr(float(self.observed[i, 0])),
                            repr(float(self.predicted[i, 0])), self.strategy,
                            "" if self.seed is None else self.seed])


def _windows(n: int, T: int) -> tuple[list[int], int]:
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if n < T:
        raise ConfigError(f"split of {n} days is shorter than one window of {T}")
    starts = list(range(0, n - T + 1, T))
    covered = starts[-1] + T
    return starts, n - covered


def _package(split: TimeSeriesDataset, y_norm: np.ndarray, step: np.ndarray, starts, T, strategy, seed, **meta):
    stats = split.norm_stats
    if stats is None:
        raise ConfigError("inference expects a normalized split")
    return PredictionSeries(
        y_norm=y_norm, predicted=denorm_targets(y_norm, stats), observed=denorm_targets(split.Y, stats),
        doy=split.doy, step=step, window_starts=list(starts), T=T, strategy=strategy, seed=seed,
        start=split.start, meta=meta,
    )


def _check_width(model: GruModel, split: TimeSeriesDataset, extra: int) -> None:
    want = split.X.shape[1] + extra
    if model.input_size != want:
        raise ConfigError(f"model takes {model.input_size} inputs but this inference mode feeds {want}")


def infer_iif(model: GruModel, split: TimeSeriesDataset, T: int = 366, *, strategy="IIF", seed=None):
    """Each window from a zero hidden state, all windows batched together."""
    _check_width(model, split, 0)
    n = split.n_days
    starts, tail = _windows(n, T)
    runs = starts + ([n - T] if tail else [])
    idx = np.array(runs)[:, None] + np.arange(T)
    Yhat, _, _ = forward(model, split.X[idx], np.zeros((len(runs), model.hidden_size)))
    y = np.empty((n, model.output_size))
    step = np.empty(n, dtype=np.int64)
    for j, s in enumerate(starts):
        y[s:s + T] = Yhat[j]
        step[s:s + T] = np.arange(T)
    if tail:
        y[n - tail:] = Yhat[-1, T - tail:]
        step[n - tail:] = np.arange(T - tail, T)
    return _package(split, y, step, starts, T, strategy, seed)


def infer_ssif(model: GruModel, split: TimeSeriesDataset, T: int = 366, *, strategy="SSIF", seed=None):
    """Windows in temporal order, each seeded with the previous window's final state."""
    _check_width(model, split, 0)
    n = split.n_days
    starts, tail = _windows(n, T)
    h = np.zeros((1, model.hidden_size))
    y = np.empty((n, model.output_size))
    step = np.empty(n, dtype=np.int64)
    bounds = [(s, s + T) for s in starts] + ([(n - tail, n)] if tail else [])
    for a, b in bounds:
        Yhat, h, _ = forward(model, split.X[None, a:b], h)
        y[a:b] = Yhat[0]
        step[a:b] = np.arange(b - a)
    return _package(split, y, step, starts, T, strategy, seed)


def infer_scif(model: GruModel, split: TimeSeriesDataset, y0_init, T: int = 366, *, strategy="SCIF", seed=None):
    """Windows from zero state, the appended input carrying the previous window's
    last prediction (normalized). ``y0_init`` is normalized and feeds window 1."""
    _check_width(model, split, model.output_size)
    n = split.n_days
    starts, tail = _windows(n, T)
    V = model.output_size
    y = np.empty((n, V))
    step = np.empty(n, dtype=np.int64)
    carry = np.broadcast_to(np.asarray(y0_init, dtype=np.float64), (V,)).copy()
    h0 = np.zeros((1, model.hidden_size))
    appended = []
    for s in starts:
        appended.append(carry.copy())
        Xa = append_feature(split.X[None, s:s + T], carry[None, None, :])
        Yhat, _, _ = forward(model, Xa, h0)
        y[s:s + T] = Yhat[0]
        step[s:s + T] = np.arange(T)
        carry = Yhat[0, -1].copy()
    if tail:
        s = n - T
        c = y[s - 1] if s > 0 else np.broadcast_to(np.asarray(y0_init, dtype=np.float64), (V,))
        Xa = append_feature(split.X[None, s:n], np.asarray(c)[None, None, :])
        Yhat, _, _ = forward(model, Xa, h0)
        y[n - tail:] = Yhat[0, T - tail:]
        step[n - tail:] = np.arange(T - tail, T)
    return _package(split, y, step, starts, T, strategy, seed, appended=np.array(appended))


def infer_teacher_forcing(model: GruModel, split: TimeSeriesDataset, y0_init, T: int = 366, *,
                          strategy="TF", seed=None):
    """Fully autoregressive: the appended input at every step is the model's own
    previous prediction. Windows start from zero hidden state, matching how the
    model was trained; the feedback chain runs across window boundaries."""
    _check_width(model, split, model.output_size)
    n = split.n_days
    starts, tail = _windows(n, T)
    V = model.output_size
    y = np.empty((n, V))
    step = np.empty(n, dtype=np.int64)
    prev = np.broadcast_to(np.asarray(y0_init, dtype=np.float64), (V,)).copy()
    h0 = np.zeros((1, model.hidden_size))
    for s in starts:
        Yhat, _ = autoregressive_forward(model, split.X[None, s:s + T], h0, prev[None])
        y[s:s + T] = Yhat[0]
        step[s:s + T] = np.arange(T)
        prev = Yhat[0, -1].copy()
    if tail:
        s = n - T
        Yhat, _ = autoregressive_forward(model, split.X[None, s:n], h0, y[s - 1][None] if s > 0 else prev[None])
        y[n - tail:] = Yhat[0, T - tail:]
        step[n - tail:] = np.arange(T - tail, T)
    return _package(split, y, step, starts, T, strategy, seed)


def observed_initial_value(split: TimeSeriesDataset) -> np.ndarray:
    """Normalized target on the day before the split, or zeros if there is none."""
    if split.y_before is None:
        return np.zeros(split.Y.shape[1])
    return np.asarray(split.y_before, dtype=np.float64)


def merge_step(a: np.ndarray, b: np.ndarray, tol: float = 1e-3) -> int | None:
    """First 1-based step from which ``|a - b| <= tol`` holds for good; None if never."""
    close = np.all(np.abs(np.asarray(a) - np.asarray(b)) <= tol, axis=-1) if np.ndim(a) > 1 \
        else np.abs(np.asarray(a) - np.asarray(b)) <= tol
    if close.all():
        return 1
    last_bad = int(np.flatnonzero(~close)[-1])
    if last_bad == len(close) - 1:
        return None
    return last_bad + 2


@dataclass
class SensitivityReport:
    inits: list[float]
    predictions: list[PredictionSeries]
    merge_steps: dict[tuple[int, int], int | None]
    tol: float

    @property
    def worst_merge_step(self) -> int | None:
        steps = list(self.merge_steps.values())
        if any(s is None for s in steps):
            return None
        return max(steps) if steps else 1

    def write_csv(self, trajectories: str | Path, merges: str | Path) -> None:
        with open(trajectories, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"init_{v:g}" for v in self.inits])
            for t in range(len(self.predictions[0])):
                w.writerow([t + 1] + [repr(float(p.predicted[t, 0])) for p in self.predictions])
        with open(merges, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["init_a", "init_b", "merge_step"])
            for (i, j), m in self.merge_steps.items():
                w.writerow([self.inits[i], self.inits[j], "" if m is None else m])


def scif_sensitivity(model: GruModel, split: TimeSeriesDataset, y0_list, T: int = 366,
                     tol: float = 1e-3, normalized_inits: bool = False) -> SensitivityReport:
    """Run SCIF once per initial value and report pairwise merge steps.

    ``y0_list`` is in original target units unless ``normalized_inits``;
    ``tol`` always applies to normalized predictions.
    """
    y0_list = [float(v) for v in y0_list]
    if len(y0_list) < 2:
        raise ConfigError("need at least two initial values")
    stats = split.norm_stats
    preds = []
    for v in y0_list:
        y0 = v if normalized_inits else (v - stats.y_mean[0]) / stats.y_std[0]
        preds.append(infer_scif(model, split, y0, T, strategy=f"SCIF[y0={v:g}]"))
    merges = {(i, j): merge_step(preds[i].y_norm, preds[j].y_norm, tol)
              for i, j in combinations(range(len(preds)), 2)}
    return SensitivityReport(y0_list, preds, merges, tol)


INFERENCE_FOR = {"RMB": "IIF", "SMB": "SSIF", "SSMB": "SSIF", "CMB": "SCIF", "TF": "TF"}


def infer(mode: str, model: GruModel, split: TimeSeriesDataset, T: int = 366, y0_init=None, seed=None,
          strategy: str | None = None) -> PredictionSeries:
    """Dispatch by inference mode name (IIF, SSIF, SCIF, TF)."""
    label = strategy or mode
    if mode == "IIF":
        return infer_iif(model, split, T, strategy=label, seed=seed)
    if mode == "SSIF":
        return infer_ssif(model, split, T, strategy=label, seed=seed)
    y0 = observed_initial_value(split) if y0_init is None else y0_init
    if mode == "SCIF":
        return infer_scif(model, split, y0, T, strategy=label, seed=seed)
    if mode == "TF":
        return infer_teacher_forcing(model, split, y0, T, strategy=label, seed=seed)
    raise ConfigError(f"unknown inference mode {mode!r}")
