"""Training loop for RMB, SMB, SSMB, CMB and teacher forcing (TF)."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .batching import BatchPlan, HiddenStateRegistry, make_plan
from .data import (TimeSeriesDataset, apply_norm, augment_initial_value, augment_teacher_forcing,
                   fit_norm, segment_arrays, slice_segments, split_chrono)
from .errors import ConfigError, DivergenceError
from .gru import GruModel, backward, forward, init_params, mse_and_grad
from .inference import INFERENCE_FOR, infer
from .optim import Adam

log = logging.getLogger(__name__)

STRATEGIES = ("RMB", "SMB", "SSMB", "CMB", "TF")


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "RMB"
    variable: str = "sw"
    T: int = 366
    stride: int | None = None
    bs: int = 64
    lr: float = 0.01
    max_epochs: int = 500
    patience: int = 50
    hidden_size: int = 32
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.bs < 1:
            raise ConfigError(f"bs must be >= 1, got {self.bs}")
        if not 0 <= self.patience < self.max_epochs:
            raise ConfigError(f"need 0 <= patience < max_epochs, got {self.patience} and {self.max_epochs}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")

    @property
    def effective_stride(self) -> int:
        if self.stride is not None:
            return self.stride
        # stateful strategies need disjoint consecutive windows; shuffled ones overlap by half
        return self.T if self.strategy in ("SMB", "SSMB") else self.T // 2

    @property
    def inference(self) -> str:
        return INFERENCE_FOR[self.strategy]


@dataclass
class Splits:
    """Normalized train/valid/test splits for one target variable."""

    train: TimeSeriesDataset
    valid: TimeSeriesDataset
    test: TimeSeriesDataset

    @property
    def stats(self):
        return self.train.norm_stats


def prepare_splits(dataset: TimeSeriesDataset, variable: str, fracs=(0.5, 0.1, 0.4),
                   train_years: int | None = None, days_per_year: int = 366) -> Splits:
    """Chronological split, normalization fitted on (the used part of) train, one target kept.

    ``train_years`` keeps only the most recent years of the training split;
    validation and test are unchanged.
    """
    train, valid, test = split_chrono(dataset, fracs)
    if train_years is not None:
        need = train_years * days_per_year
        if need > train.n_days:
            raise ConfigError(f"asked for {train_years} training years, only {train.n_days // days_per_year} available")
        train = train.rows(train.n_days - need, train.n_days)
    stats = fit_norm(train)
    out = [apply_norm(s, stats).select_target(variable) for s in (train, valid, test)]
    return Splits(*out)


@dataclass
class TrainingSet:
    """Stacked segment arrays for one strategy."""

    X: np.ndarray   # (n_seg, T, F')
    Y: np.ndarray   # (n_seg, T, V)
    segments: list
    augmented: bool


def build_training_set(split: TimeSeriesDataset, config: TrainConfig) -> TrainingSet:
    segments = slice_segments(split.n_days, config.T, config.effective_stride)
    X, Y = segment_arrays(split, segments)
    augmented = False
    if config.strategy == "CMB":
        X, augmented = augment_initial_value(split, segments), True
    elif config.strategy == "TF":
        X, augmented = augment_teacher_forcing(split, segments), True
    return TrainingSet(X, Y, segments, augmented)


@dataclass
class TrainRecord:
    config: TrainConfig
    seed: int
    train_mse: list[float] = field(default_factory=list)
    valid_mse: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0
    model: GruModel | None = None
    stopped_early: bool = False

    @property
    def best_valid_mse(self) -> float:
        return self.valid_mse[self.best_epoch - 1]

    @property
    def epochs_run(self) -> int:
        return len(self.train_mse)

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "valid_mse", "seconds"])
            for i, (a, b, c) in enumerate(zip(self.train_mse, self.valid_mse, self.seconds), start=1):
                w.writerow([i, repr(a), repr(b), repr(c)])


def _check_loss(loss: float, **where) -> None:
    if not np.isfinite(loss):
        raise DivergenceError("non-finite training loss", **where)


def _sequential_batch(model, ids, data, registry, incoming, trace):
    # segments one at a time, detached states along edges, gradients averaged over the batch
    grads, total = None, 0.0
    scale = 1.0 / len(ids)
    for i in ids:
        h0 = registry.take(incoming.get(i))[None]
        if trace is not None:
            trace.append((i, time.perf_counter()))
        Yhat, h_last, cache = forward(model, data.X[i:i + 1], h0)
        loss, dY = mse_and_grad(Yhat, data.Y[i:i + 1])
        _check_loss(loss, segment=i)
        g = backward(model, cache, dY * scale)
        if grads is None:
            grads = g
        else:
            for k, v in grads.params().items():
                v += getattr(g, k)
        registry.put(i, h_last[0])
        total += loss
    return grads, total


def _parallel_batch(model, ids, data, registry, incoming, trace, stateful):
    if stateful:
        h0 = np.stack([registry.take(incoming.get(i)) for i in ids])
    else:
        h0 = np.zeros((len(ids), model.hidden_size))
    if trace is not None:
        trace.extend((i, time.perf_counter()) for i in ids)
    Yhat, h_last, cache = forward(model, data.X[ids], h0)
    loss, dY = mse_and_grad(Yhat, data.Y[ids])
    _check_loss(loss)
    grads = backward(model, cache, dY)
    if stateful:
        for j, i in enumerate(ids):
            registry.put(i, h_last[j])
    return grads, loss * len(ids)


def train_epoch(model: GruModel, plan: BatchPlan, data: TrainingSet, optimizer: Adam,
                registry: HiddenStateRegistry | None = None, trace: list | None = None) -> float:
    """One pass over ``plan``; returns the mean per-segment training MSE.

    Shuffled and positional-stateful plans run each batch as one batched
    forward. Sequential plans run segments one at a time, handing detached
    final states along the plan's edges and averaging gradients per batch.
    ``trace`` (optional) receives ``(segment_id, forward_start_time)``.
    """
    if data.X.shape[-1] != model.input_size:
        raise ConfigError(f"training inputs have {data.X.shape[-1]} features, model takes {model.input_size}")
    registry = registry if registry is not None else HiddenStateRegistry(model.hidden_size)
    registry.reset_all()
    incoming = plan.incoming()
    stateful = bool(plan.state_edges)
    total, count = 0.0, 0
    for b, batch in enumerate(plan.batches):
        ids = list(batch)
        try:
            if plan.sequential:
                grads, loss_sum = _sequential_batch(model, ids, data, registry, incoming, trace)
            else:
                grads, loss_sum = _parallel_batch(model, ids, data, registry, incoming, trace, stateful)
            optimizer.step(grads)
            if not model.is_finite():
                raise DivergenceError("non-finite parameters after update")
        except DivergenceError as exc:
            raise exc.at(batch=b) from None
        total += loss_sum
        count += len(ids)
    return total / count


def validation_mse(model: GruModel, split: TimeSeriesDataset, config: TrainConfig) -> float:
    """MSE (normalized space) of the strategy's paired inference on ``split``."""
    pred = infer(config.inference, model, split, config.T)
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is reported as a non-finite loss
        d = pred.y_norm - split.Y
        return float(np.mean(d * d))


def fit(config: TrainConfig, splits: Splits, seed: int | None = None,
        validator: Callable[[GruModel], float] | None = None,
        on_epoch: Callable[[int, float, float], None] | None = None) -> TrainRecord:
    """Train one model with early stopping and best-epoch restore."""
    seed = config.seeds[0] if seed is None else seed
    data = build_training_set(splits.train, config)
    F = data.X.shape[-1]
    model = init_params(seed, F, config.hidden_size, data.Y.shape[-1])
    optimizer = Adam(model, lr=config.lr)
    rng = np.random.default_rng(seed)
    registry = HiddenStateRegistry(config.hidden_size)
    validator = validator or (lambda m: validation_mse(m, splits.valid, config))
    fixed_plan = None
    if config.strategy in ("SMB", "SSMB"):
        fixed_plan = make_plan(config.strategy, len(data.segments), config.bs)

    record = TrainRecord(config, seed)
    best, best_model, since_best = np.inf, model.copy(), 0
    for epoch in range(1, config.max_epochs + 1):
        plan = fixed_plan or make_plan(config.strategy, len(data.segments), config.bs, rng,
                                       augmented=data.augmented)
        t0 = time.perf_counter()
        try:
            loss = train_epoch(model, plan, data, optimizer, registry)
            t1 = time.perf_counter()
            vloss = validator(model)
        except DivergenceError as exc:
            raise exc.at(strategy=config.strategy, seed=seed, epoch=epoch) from None
        if not np.isfinite(vloss):
            raise DivergenceError("non-finite validation loss", strategy=config.strategy, seed=seed, epoch=epoch)
        record.train_mse.append(loss)
        record.valid_mse.append(vloss)
        record.seconds.append(t1 - t0)
        if on_epoch:
            on_epoch(epoch, loss, vloss)
        if vloss < best:
            best, best_model, since_best = vloss, model.copy(), 0
            record.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                record.stopped_early = True
                break
    log.info("%s/%s seed %d: best epoch %d of %d, valid mse %.5f", config.strategy, config.variable,
             seed, record.best_epoch, record.epochs_run, best)
    record.model = best_model
    return record


def run_multi_seed(config: TrainConfig, splits: Splits, **kwargs) -> list[TrainRecord]:
    records = []
    for seed in config.seeds:
        try:
            records.append(fit(config, splits, seed, **kwargs))
        except DivergenceError as exc:
            raise exc.at(seed=seed) from None
    return records


def time_epochs(config: TrainConfig, splits: Splits, n_epochs: int = 6, seed: int | None = None) -> float:
    """Median training seconds per epoch, first epoch discarded as warm-up."""
    if n_epochs < 3:
        raise ConfigError("need at least 3 epochs (the first is discarded)")
    seed = config.seeds[0] if seed is None else seed
    data = build_training_set(splits.train, config)
    model = init_params(seed, data.X.shape[-1], config.hidden_size, data.Y.shape[-1])
    optimizer = Adam(model, lr=config.lr)
    rng = np.random.default_rng(seed)
    registry = HiddenStateRegistry(config.hidden_size)
    times = []
    for _ in range(n_epochs):
        plan = make_plan(config.strategy, len(data.segments), config.bs, rng, augmented=data.augmented)
        t0 = time.perf_counter()
        train_epoch(model, plan, data, optimizer, registry)
        times.append(time.perf_counter() - t0)
    return float(np.median(times[1:]))


def with_strategy(config: TrainConfig, strategy: str) -> TrainConfig:
    return replace(config, strategy=strategy)
