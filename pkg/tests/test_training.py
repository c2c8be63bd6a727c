import math

import numpy as np
import pytest

from mdmlp_eia.model import ModelConfig, as_tensors, init_params, model_forward
from mdmlp_eia.preprocess import make_windows
from mdmlp_eia.tensor import ConfigError, DimensionError, Tape, backward
from mdmlp_eia.training import (
    OptState,
    TrainConfig,
    TrainingError,
    batch_gradients,
    clip_by_global_norm,
    evaluate,
    forecast_metrics,
    loss,
    lr_at,
    opt_step,
    train,
    train_loss,
)

TINY = ModelConfig(lookback=16, horizon=8, channels=2, n_h=16)


def linear_trend(t=300, c=2, seed=0):
    rng = np.random.default_rng(seed)
    steps = np.arange(t)[:, None]
    return 0.02 * steps * np.arange(1, c + 1) + 0.05 * rng.normal(size=(t, c))


def splits(series, cfg):
    n = len(series)
    return (
        make_windows(series[: int(0.7 * n)], cfg.lookback, cfg.horizon),
        make_windows(series[int(0.7 * n) - cfg.lookback :], cfg.lookback, cfg.horizon, split="val"),
    )


class TestLoss:
    @pytest.mark.parametrize("kind", ["mse", "mae", "arctan"])
    def test_zero_error(self, kind, rng):
        p = rng.normal(size=(4, 3))
        assert loss(p, p, kind).item() == 0.0

    def test_hand_values(self):
        assert loss(np.array([0.0, 2.0]), np.array([1.0, 1.0]), "mse").item() == 1.0
        assert loss(np.array([0.0, 2.0]), np.array([1.0, 1.0]), "mae").item() == 1.0

    def test_arctan_unit_error(self):
        assert loss(np.ones((3, 2)), np.zeros((3, 2)), "arctan").item() == pytest.approx(math.pi / 4, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            loss(np.ones(3), np.ones(4))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            loss(np.ones(3), np.ones(3), "huber")


class TestSchedule:
    def test_midpoint(self):
        cfg = TrainConfig(epochs=20, base_lr=0.01)
        assert lr_at(10, cfg) == pytest.approx(0.005)

    def test_closed_form(self):
        cfg = TrainConfig(epochs=20, base_lr=0.01, lr_midpoint=10)
        assert lr_at(0, cfg) == pytest.approx(0.01 / (1 + math.exp(-10)), rel=1e-12)
        assert lr_at(0, cfg) == pytest.approx(0.0099995, abs=1e-7)

    def test_monotone_and_vanishing(self):
        cfg = TrainConfig(epochs=30, lr_steepness=0.7)
        lrs = [lr_at(e, cfg) for e in range(2000)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        assert 0.0 <= lrs[-1] < 1e-300

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(patience=0)
        with pytest.raises(ConfigError):
            TrainConfig(loss="l4")


class TestOptimizer:
    def test_zero_gradient_is_fixed_point(self, rng):
        p = {"w": rng.normal(size=(3, 2))}
        new, _ = opt_step(p, {"w": np.zeros((3, 2))}, OptState.zeros_like(p), lr=0.1, weight_decay=0.0)
        assert np.array_equal(new["w"], p["w"])

    def test_first_step_moves_by_lr(self):
        p = {"w": np.array([1.0])}
        new, st = opt_step(p, {"w": np.array([1.0])}, OptState.zeros_like(p), lr=0.01)
        assert new["w"][0] == pytest.approx(1.0 - 0.01, abs=1e-9)
        assert st.step == 1

    def test_decay_only(self):
        p = {"w": np.array([2.0, -4.0])}
        new, _ = opt_step(p, {"w": np.zeros(2)}, OptState.zeros_like(p), lr=0.1, weight_decay=0.5)
        assert np.allclose(new["w"], p["w"] * (1 - 0.05))

    def test_non_finite_gradient(self):
        p = {"w": np.zeros(2)}
        with pytest.raises(TrainingError, match="step 1"):
            opt_step(p, {"w": np.array([np.nan, 0.0])}, OptState.zeros_like(p), lr=0.1)

    def test_shape_mismatch(self):
        p = {"w": np.zeros(2)}
        with pytest.raises(DimensionError):
            opt_step(p, {"w": np.zeros(3)}, OptState.zeros_like(p), lr=0.1)

    def test_moment_shapes(self, rng):
        p = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=4)}
        st = OptState.zeros_like(p)
        assert all(st.m[k].shape == p[k].shape and st.v[k].shape == p[k].shape for k in p)

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        out = clip_by_global_norm(g, 1.0)
        assert math.hypot(out["a"][0], out["b"][0]) == pytest.approx(1.0)
        assert clip_by_global_norm(g, 10.0) is g


class TestGradientAccumulation:
    def test_batch_gradient_is_mean_of_sample_gradients(self, rng):
        cfg = TINY.replace(dropout_trend=0, dropout_strong=0, dropout_weak=0, dropout_eia=0)
        p = init_params(cfg, 0)
        x = rng.normal(size=(3, 16, 2))
        y = rng.normal(size=(3, 8, 2))
        _, gb = batch_gradients(p, cfg, x, y, "mse", training=False)
        per = [batch_gradients(p, cfg, x[i : i + 1], y[i : i + 1], "mse", training=False)[1] for i in range(3)]
        for k in gb:
            assert np.max(np.abs(gb[k] - sum(g[k] for g in per) / 3)) < 1e-10


class TestTrain:
    def test_loss_decreases_on_linear_trend(self):
        series = linear_trend()
        tr, va = splits(series, TINY)
        res = train(tr, va, TINY, TrainConfig(epochs=5, patience=5, loss="mse", base_lr=3e-3, seed=0))
        losses = [h.train_loss for h in res.history]
        assert len(losses) == 5
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_frozen_model_stops_after_two_epochs(self):
        tr, va = splits(linear_trend(), TINY)
        res = train(tr, va, TINY, TrainConfig(epochs=10, patience=1, base_lr=0.0))
        assert len(res.history) == 2
        assert res.best_epoch == 0

    def test_returns_best_not_last(self):
        tr, va = splits(linear_trend(), TINY)
        res = train(tr, va, TINY, TrainConfig(epochs=6, patience=6, base_lr=5e-2, loss="mse"))
        vals = [h.val_mse for h in res.history]
        assert res.best_epoch == int(np.argmin(vals))
        assert evaluate(res.params, va, TINY).mse == vals[res.best_epoch]

    def test_bitwise_reproducible(self):
        tr, va = splits(linear_trend(), TINY)
        tc = TrainConfig(epochs=3, seed=7)
        a, b = train(tr, va, TINY, tc), train(tr, va, TINY, tc)
        assert [vars(h) for h in a.history] == [vars(h) for h in b.history]
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_epoch(self):
        tr, va = splits(linear_trend() * 1e300, TINY)
        with pytest.raises(TrainingError, match="epoch 0"):
            train(tr, va, TINY, TrainConfig(epochs=2, loss="mse"))

    def test_empty_split_rejected(self):
        tr, va = splits(linear_trend(), TINY)
        va.starts = va.starts[:0]
        with pytest.raises(ConfigError):
            train(tr, va, TINY, TrainConfig(epochs=1))

    def test_on_epoch_callback(self):
        tr, va = splits(linear_trend(), TINY)
        seen = []
        train(tr, va, TINY, TrainConfig(epochs=2), on_epoch=seen.append)
        assert [r.epoch for r in seen] == [0, 1]


class TestEvaluate:
    def test_perfect_predictor(self, rng):
        y = rng.normal(size=(5, 4, 3))
        rep = forecast_metrics(y, y)
        assert rep.mse == 0.0 and rep.mae == 0.0

    def test_zero_predictor_on_standardised_data(self, rng):
        y = rng.normal(size=(2000, 24, 3))
        assert forecast_metrics(np.zeros_like(y), y).mse == pytest.approx(1.0, abs=0.1)

    def test_matches_direct_computation(self, rng):
        cfg = TINY
        series = linear_trend()
        ds = make_windows(series, cfg.lookback, cfg.horizon)
        p = init_params(cfg)
        rep = evaluate(p, ds, cfg, keep_series=True, batch_size=7)
        pred, _ = model_forward(ds.inputs, as_tensors(p), cfg)
        direct = forecast_metrics(pred.data, ds.targets)
        assert rep.mse == pytest.approx(direct.mse, rel=1e-12)
        assert rep.mae == pytest.approx(direct.mae, rel=1e-12)
        assert np.allclose(rep.mse_per_step, direct.mse_per_step)
        assert rep.predictions.shape == (len(ds), 8, 2)

    def test_train_loss_kinds(self):
        ds = make_windows(linear_trend(), TINY.lookback, TINY.horizon)
        p = init_params(TINY)
        assert train_loss(p, ds, TINY, "mse") == evaluate(p, ds, TINY).mse
        assert 0 < train_loss(p, ds, TINY, "arctan") < math.pi / 2

    def test_metrics_shape_check(self):
        with pytest.raises(DimensionError):
            forecast_metrics(np.ones((2, 3)), np.ones((2, 3)))


def test_backward_visits_every_node_once_in_training_graph(rng):
    cfg = TINY
    pt = as_tensors(init_params(cfg), requires_grad=True)
    with Tape() as tape:
        y, _ = model_forward(rng.normal(size=(2, 16, 2)), pt, cfg)
        value = loss(y, rng.normal(size=(2, 8, 2)), "arctan")
    backward(tape, value, pt)
    assert tape.visits == len(tape.nodes)
