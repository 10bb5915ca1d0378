import itertools

import numpy as np
import pytest

from rnnbatch.batching import BatchPlan, make_plan
from rnnbatch.errors import ConfigError, DivergenceError
from rnnbatch.gru import backward, forward, mse_and_grad, zero_model
from rnnbatch.hydro import make_dataset
from rnnbatch.optim import Adam, AdamState, adam_step
from rnnbatch.trainer import (TrainConfig, TrainingSet, build_training_set, fit, prepare_splits, run_multi_seed,
                              time_epochs, train_epoch, validation_mse)


def small_config(**kw):
    base = dict(T=30, bs=4, hidden_size=4, max_epochs=3, patience=2, seeds=(1, 2))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def splits():
    return prepare_splits(make_dataset(5, 4), "sw")


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(strategy="XMB")
    with pytest.raises(ConfigError):
        TrainConfig(bs=0)
    with pytest.raises(ConfigError):
        TrainConfig(patience=500, max_epochs=500)
    assert TrainConfig(strategy="SSMB").effective_stride == 366
    assert TrainConfig(strategy="CMB").effective_stride == 183
    assert TrainConfig(strategy="TF").inference == "TF"


def test_prepare_splits_keeps_recent_training_years():
    ds = make_dataset(5, 20)
    sp = prepare_splits(ds, "sno", train_years=4)
    assert sp.train.n_days == 4 * 366 and sp.train.start == 6 * 366
    assert sp.valid.start == 10 * 366 and sp.stats.y_names == ("sno",)
    with pytest.raises(ConfigError):
        prepare_splits(ds, "sno", train_years=11)


def test_zero_targets_leave_zero_model_unchanged():
    rng = np.random.default_rng(0)
    data = TrainingSet(rng.normal(size=(6, 10, 3)), np.zeros((6, 10, 1)), list(range(6)), False)
    model = zero_model(3, 4, 1)
    plan = make_plan("RMB", 6, 4, rng)
    loss = train_epoch(model, plan, data, Adam(model))
    assert loss == 0.0
    assert np.all(model.flat() == 0)


def test_smb_and_ssmb_agree_at_batch_size_one(splits):
    a = fit(small_config(strategy="SMB", bs=1), splits, seed=3)
    b = fit(small_config(strategy="SSMB", bs=1), splits, seed=3)
    assert a.train_mse == b.train_mse and a.valid_mse == b.valid_mse
    assert np.array_equal(a.model.flat(), b.model.flat())


def test_rmb_batch_gradient_is_mean_of_segment_gradients():
    rng = np.random.default_rng(1)
    model = zero_model(3, 4, 1)
    for p in model.params().values():
        p[...] = rng.normal(0, 0.5, p.shape)
    X, Y = rng.normal(size=(5, 12, 3)), rng.normal(size=(5, 12, 1))
    Yhat, _, cache = forward(model, X, np.zeros((5, 4)))
    batch = backward(model, cache, mse_and_grad(Yhat, Y)[1]).flat()
    singles = []
    for i in range(5):
        Yi, _, ci = forward(model, X[i:i + 1], np.zeros((1, 4)))
        singles.append(backward(model, ci, mse_and_grad(Yi, Y[i:i + 1])[1]).flat())
    np.testing.assert_allclose(batch, np.mean(singles, axis=0), rtol=1e-10, atol=1e-14)

    # one train_epoch over a single batch equals one Adam step on that mean gradient
    expected = model.copy()
    params = expected.params()
    grads = dict(zip(params, np.split(np.mean(singles, axis=0), np.cumsum([v.size for v in params.values()])[:-1])))
    adam_step(params, {k: grads[k].reshape(params[k].shape) for k in params}, AdamState(lr=0.01))
    data = TrainingSet(X, Y, list(range(5)), False)
    train_epoch(model, BatchPlan("RMB", (tuple(range(5)),)), data, Adam(model))
    np.testing.assert_allclose(model.flat(), expected.flat(), rtol=1e-10, atol=1e-12)


def test_constant_validation_stops_at_epoch_51(splits):
    rec = fit(small_config(max_epochs=500, patience=50), splits, validator=lambda m: 1.0)
    assert rec.epochs_run == 51 and rec.best_epoch == 1 and rec.stopped_early


def test_improving_validation_runs_to_max_epochs(splits):
    counter = itertools.count()
    cfg = small_config(max_epochs=500, patience=50, T=10, hidden_size=2)
    rec = fit(cfg, prepare_splits(make_dataset(5, 2), "sw"), validator=lambda m: 1.0 / (1 + next(counter)))
    assert rec.epochs_run == 500 and rec.best_epoch == 500 and not rec.stopped_early


def test_best_checkpoint_is_restored(splits):
    cfg = small_config(strategy="CMB", max_epochs=6, patience=5)
    rec = fit(cfg, splits, seed=2)
    assert rec.best_valid_mse == min(rec.valid_mse)
    assert validation_mse(rec.model, splits.valid, cfg) == rec.best_valid_mse


def test_training_log(tmp_path, splits):
    rec = fit(small_config(), splits)
    rec.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,valid_mse,seconds" and len(lines) == rec.epochs_run + 1


def test_ssmb_processes_segments_in_time_order(splits):
    cfg = small_config(strategy="SSMB")
    data = build_training_set(splits.train, cfg)
    model = zero_model(data.X.shape[-1], 4, 1)
    plan = make_plan("SSMB", len(data.segments), cfg.bs)
    trace = []
    train_epoch(model, plan, data, Adam(model), trace=trace)
    ids = [i for i, _ in trace]
    stamps = [t for _, t in trace]
    assert ids == list(range(len(data.segments)))
    assert all(b > a for a, b in zip(stamps, stamps[1:]))


@pytest.mark.parametrize("strategy", ["RMB", "SMB", "SSMB", "CMB", "TF"])
def test_every_strategy_trains(strategy, splits):
    rec = fit(small_config(strategy=strategy, max_epochs=2, patience=1), splits)
    assert rec.epochs_run == 2 and np.all(np.isfinite(rec.train_mse))


def test_multi_seed_deterministic(splits):
    cfg = small_config()
    a, b = run_multi_seed(cfg, splits), run_multi_seed(cfg, splits)
    assert [r.seed for r in a] == [1, 2]
    assert [r.train_mse for r in a] == [r.train_mse for r in b]
    assert a[0].train_mse != a[1].train_mse


def test_divergence_reports_location(splits):
    old = splits.train.X[40, 0]
    splits.train.X[40, 0] = np.nan
    try:
        with pytest.raises(DivergenceError) as info:
            run_multi_seed(small_config(strategy="RMB"), splits)
    finally:
        splits.train.X[40, 0] = old
    loc = info.value.location
    assert loc["strategy"] == "RMB" and loc["seed"] == 1 and loc["epoch"] == 1 and "batch" in loc


def test_time_epochs(splits):
    assert time_epochs(small_config(), splits, n_epochs=3) > 0
    with pytest.raises(ConfigError):
        time_epochs(small_config(), splits, n_epochs=2)
