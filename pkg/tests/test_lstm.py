"""Network forward/backward correctness, training behaviour, serialization."""

import numpy as np
import pytest

from odeaug.errors import TrainingDivergedError
from odeaug.lstm import (PredictorConfig, init_network,
                         loss_and_gradients, make_targets, network_from_dict,
                         network_to_dict, predict, train)
from odeaug.series import TimeSeries


def toy_config(**overrides):
    base = dict(
        input_channels=("a", "b"),
        predicted_channels=("b",),
        layer_sizes=(2, 2),
        prediction_length=2,
        seed=3,
    )
    base.update(overrides)
    return PredictorConfig(**base)


def finite_difference_check(config, batch_shape=(2, 5), h=1e-5):
    rng = np.random.default_rng(0)
    net = init_network(config)
    b, t = batch_shape
    x = rng.normal(size=(b, t, len(config.input_channels)))
    targets = rng.normal(size=(b, t, config.output_dim))
    mask = np.ones_like(targets)
    mask[:, -config.prediction_length:, :] = 0.0

    _, grads = loss_and_gradients(net, x, targets, mask)
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            lp, _ = loss_and_gradients(net, x, targets, mask)
            p[idx] = orig - h
            lm, _ = loss_and_gradients(net, x, targets, mask)
            p[idx] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(g[idx]), abs(fd), 1e-8)
            worst = max(worst, abs(g[idx] - fd) / denom)
            it.iternext()
    return worst


class TestGradients:
    def test_bptt_matches_finite_differences_two_layer(self):
        worst = finite_difference_check(toy_config())
        assert worst < 1e-4

    def test_bptt_matches_finite_differences_single_layer(self):
        worst = finite_difference_check(
            toy_config(layer_sizes=(3,), prediction_length=1)
        )
        assert worst < 1e-4

    def test_carried_state_gradient(self):
        # nonzero initial states must not break the backward pass
        config = toy_config(layer_sizes=(2,))
        rng = np.random.default_rng(1)
        net = init_network(config)
        x = rng.normal(size=(1, 4, 2))
        targets = rng.normal(size=(1, 4, config.output_dim))
        mask = np.ones_like(targets)
        h0 = [rng.normal(size=(1, 2))]
        c0 = [rng.normal(size=(1, 2))]
        _, grads = loss_and_gradients(net, x, targets, mask, h0=h0, c0=c0)
        step = 1e-5
        p = net.layers[0].w_h
        g = grads[1]
        orig = p[0, 0]
        p[0, 0] = orig + step
        lp, _ = loss_and_gradients(net, x, targets, mask, h0=h0, c0=c0)
        p[0, 0] = orig - step
        lm, _ = loss_and_gradients(net, x, targets, mask, h0=h0, c0=c0)
        p[0, 0] = orig
        fd = (lp - lm) / (2 * step)
        assert abs(g[0, 0] - fd) / max(abs(fd), 1e-8) < 1e-4


class TestPredict:
    def _series(self, n=30, seed=0):
        rng = np.random.default_rng(seed)
        return TimeSeries(["a", "b"], 0.1, rng.normal(size=(n, 2)))

    def test_zero_network_predicts_zero(self):
        config = toy_config()
        config.norm_mean = {"a": 0.0, "b": 0.0}
        config.norm_std = {"a": 1.0, "b": 1.0}
        net = init_network(config)
        for p in net.parameters():
            p[...] = 0.0
        out = predict(net, config, self._series())
        assert np.allclose(out, 0.0)

    def test_output_shape(self):
        config = toy_config()
        config.norm_mean = {"a": 0.0, "b": 0.0}
        config.norm_std = {"a": 1.0, "b": 1.0}
        net = init_network(config)
        series = self._series(n=40)
        out = predict(net, config, series)
        assert out.shape == (40, config.output_dim)

    def test_deterministic(self):
        config = toy_config()
        config.norm_mean = {"a": 0.1, "b": -0.2}
        config.norm_std = {"a": 1.1, "b": 0.9}
        net = init_network(config)
        series = self._series(n=25, seed=4)
        assert np.array_equal(predict(net, config, series),
                              predict(net, config, series))

    def test_missing_channel_rejected(self):
        config = toy_config()
        config.norm_mean = {"a": 0.0, "b": 0.0}
        config.norm_std = {"a": 1.0, "b": 1.0}
        net = init_network(config)
        series = TimeSeries(["a"], 0.1, np.zeros((10, 1)))
        with pytest.raises(ValueError, match="channels"):
            predict(net, config, series)


class TestMakeTargets:
    def test_layout_and_mask(self):
        x = np.arange(10.0).reshape(5, 2)  # 5 steps, 2 channels
        targets, mask = make_targets(x, prediction_length=2)
        assert targets.shape == (5, 4)
        # channel 0, horizon 1 at column 0; horizon 2 at column 1
        assert targets[0, 0] == x[1, 0]
        assert targets[0, 1] == x[2, 0]
        # channel 1, horizon 1 at column 2
        assert targets[0, 2] == x[1, 1]
        assert mask[3, 1] == 0.0 and mask[3, 0] == 1.0
        assert np.all(mask[4] == 0.0)


class TestTrain:
    def _sine_series(self, n=200):
        t = np.arange(n) * 0.05
        return TimeSeries(["s"], 0.05, np.sin(2 * np.pi * t / 4.0)[:, None])

    def test_loss_decreases_ten_fold_on_sine(self):
        config = PredictorConfig(
            input_channels=("s",), predicted_channels=("s",),
            layer_sizes=(16,), prediction_length=3, epochs=500,
            learning_rate=1e-2, seed=0, patience=10**9, val_fraction=0.0,
        )
        _, log = train([self._sine_series()], config)
        assert log.train_losses[0] / log.train_losses[-1] >= 10.0

    def test_seeded_determinism(self):
        def run():
            config = PredictorConfig(
                input_channels=("s",), predicted_channels=("s",),
                layer_sizes=(4,), prediction_length=2, epochs=10, seed=5,
                val_fraction=0.0, patience=10**9,
            )
            net, _ = train([self._sine_series(80)], config)
            return net

        a, b = run(), run()
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)

    def test_labeled_series_rejected(self):
        series = self._sine_series(50)
        labels = np.zeros(50, dtype=bool)
        labels[3] = True
        bad = series.with_labels(labels)
        config = PredictorConfig(
            input_channels=("s",), predicted_channels=("s",),
            layer_sizes=(4,), prediction_length=2,
        )
        with pytest.raises(ValueError, match="normal"):
            train([bad], config)

    def test_divergence_reported_with_epoch(self):
        config = PredictorConfig(
            input_channels=("s",), predicted_channels=("s",),
            layer_sizes=(4,), prediction_length=1, epochs=50,
            learning_rate=1e200, clip_norm=0.0, seed=0, val_fraction=0.0,
            patience=10**9,
        )
        with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError):
            train([self._sine_series(60)], config)

    def test_early_stopping_on_validation(self):
        series = [self._sine_series(120) for _ in range(3)]
        config = PredictorConfig(
            input_channels=("s",), predicted_channels=("s",),
            layer_sizes=(8,), prediction_length=2, epochs=200,
            seed=1, patience=3, val_fraction=0.0,
        )
        val = [self._sine_series(120)]
        net, log = train(series, config, val_series=val)
        assert log.best_epoch >= 0
        assert len(log.val_losses) <= 200

    def test_accepts_dataset_container(self):
        from odeaug.series import Dataset

        series = self._sine_series(60)
        config = PredictorConfig(
            input_channels=("s",), predicted_channels=("s",),
            layer_sizes=(4,), prediction_length=1, epochs=2, seed=0,
            val_fraction=0.0, patience=10**9,
        )
        dataset = Dataset([series], control_channels=(),
                          dependent_channels=("s",))
        net, _ = train(dataset, config)
        assert net.w_out.shape == (1, 4)

    def test_normalization_stats_stored(self):
        config = PredictorConfig(
            input_channels=("s",), predicted_channels=("s",),
            layer_sizes=(4,), prediction_length=1, epochs=2, seed=0,
            val_fraction=0.0, patience=10**9,
        )
        train([self._sine_series(50)], config)
        assert config.norm_mean is not None and "s" in config.norm_mean
        assert config.norm_std["s"] > 0

    def test_normalization_round_trip(self):
        config = toy_config()
        config.norm_mean = {"a": 1.5, "b": -0.5}
        config.norm_std = {"a": 2.0, "b": 0.25}
        rng = np.random.default_rng(2)
        series = TimeSeries(["a", "b"], 0.1, rng.normal(size=(20, 2)))
        z = config.normalize(series, ("a", "b"))
        back = z * np.array([2.0, 0.25]) + np.array([1.5, -0.5])
        assert np.allclose(back, series.values, atol=1e-12)


class TestSerialization:
    def test_round_trip_preserves_predictions(self):
        config = toy_config()
        config.norm_mean = {"a": 0.3, "b": 0.6}
        config.norm_std = {"a": 1.2, "b": 0.8}
        net = init_network(config)
        doc = network_to_dict(net, config)
        back_net, back_config = network_from_dict(doc)
        rng = np.random.default_rng(9)
        series = TimeSeries(["a", "b"], 0.1, rng.normal(size=(15, 2)))
        assert np.allclose(predict(net, config, series),
                           predict(back_net, back_config, series), atol=1e-15)

    def test_dimension_check(self):
        config = toy_config()
        net = init_network(config)
        doc = network_to_dict(net, config)
        doc["w_out"] = [[0.0]]
        with pytest.raises(ValueError, match="dimension"):
            network_from_dict(doc)
