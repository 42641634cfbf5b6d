import numpy as np
import pytest

from csfguard.model import (ConfigError, ModelConfig, TrainConfig, build_model, default_config, predict, train,
                            train_baseline)
from helpers import toy_gradient_errors
from oracles import ArraySplits, expected_parameter_count, separable_set


def _cfg(**kw):
    return ModelConfig(**{"num_features": 25, "num_classes": 5, **kw})


class TestBuild:
    @pytest.mark.parametrize("arch", ["cnn_transformer", "plain_cnn", "logistic"])
    @pytest.mark.parametrize("encoders", [1, 3, 5])
    @pytest.mark.parametrize("shape", [(25, 5), (8, 3), (40, 9)])
    def test_parameter_count_closed_form(self, arch, encoders, shape):
        f, k = shape
        model = build_model(ModelConfig(num_features=f, num_classes=k, encoder_layers=encoders, arch=arch), seed=0)
        expect = expected_parameter_count(arch, f, k, encoders=encoders)
        assert model.parameter_count() == expect

    def test_custom_widths_parameter_count(self):
        cfg = _cfg(conv_channels=[4, 8, 16], kernel_size=5, d_model=12, heads=3, ff_width=20, encoder_layers=2)
        expect = expected_parameter_count("cnn_transformer", 25, 5, (4, 8, 16), 5, 12, 2, 20)
        assert build_model(cfg, seed=3).parameter_count() == expect

    def test_same_seed_bit_identical(self):
        a, b = build_model(_cfg(), seed=11), build_model(_cfg(), seed=11)
        for (na, ta), (nb, tb) in zip(a.state(), b.state()):
            assert na == nb and ta.tobytes() == tb.tobytes()

    def test_different_seed_differs(self):
        a, b = build_model(_cfg(), seed=1), build_model(_cfg(), seed=2)
        assert a.layer("proj").weights["weight"].data.tobytes() != b.layer("proj").weights["weight"].data.tobytes()

    def test_more_encoders_more_parameters(self):
        assert build_model(_cfg(encoder_layers=5), 0).parameter_count() > build_model(_cfg(), 0).parameter_count()

    @pytest.mark.parametrize("bad", [dict(heads=5), dict(encoder_layers=0), dict(encoder_layers=9),
                                     dict(num_classes=1), dict(arch="lstm"), dict(kernel_size=0)])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            build_model(_cfg(**bad), seed=0)

    def test_forward_shape(self):
        model = build_model(_cfg(encoder_layers=2, positional_encoding=True), seed=0)
        out = model.forward(np.zeros((3, 25), np.float32))
        assert out.shape == (3, 5)

    def test_config_round_trip(self):
        cfg = _cfg(encoder_layers=4, positional_encoding=True)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_composed_gradient_check():
    errs = toy_gradient_errors()
    assert max(errs.values()) < 1e-4, {k: v for k, v in errs.items() if v >= 1e-4}


class TestPredict:
    def test_zero_head_is_uniform(self):
        model = build_model(_cfg(), seed=0)
        model.layer("head").weights["weight"].data[:] = 0
        probs, arg = predict(model, np.random.default_rng(0).normal(size=(6, 25)))
        np.testing.assert_allclose(probs, 0.2, atol=1e-7)
        assert np.all(arg == 0)  # ties go to the lowest index

    def test_batch_equals_rows(self):
        model = build_model(_cfg(), seed=0)
        x = np.random.default_rng(1).normal(size=(10, 25)).astype(np.float32)
        probs, arg = predict(model, x)
        for i in range(10):
            p1, a1 = predict(model, x[i])
            np.testing.assert_allclose(p1[0], probs[i], atol=1e-6)
            assert a1[0] == arg[i]
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_pure_function(self):
        model = build_model(_cfg(), seed=0)
        x = np.random.default_rng(1).normal(size=(4, 25))
        a, b = predict(model, x)[0], predict(model, x)[0]
        assert a.tobytes() == b.tobytes()

    def test_width_mismatch(self):
        with pytest.raises(ValueError, match="width 25"):
            predict(build_model(_cfg(), seed=0), np.zeros((2, 24)))


class TestTrain:
    def test_separable_set(self):
        data = separable_set()
        tc = TrainConfig(epochs=10, seed=0)
        model, hist = train(build_model(default_config(8, 2), seed=0), data, tc)
        _, base_hist = train_baseline("logistic", data, tc)
        # oracle: logistic regression must also solve this set
        assert base_hist.val_accuracy[-1] >= 0.95
        assert hist.val_accuracy[-1] >= 0.95
        assert len(hist.train_loss) == 10 and np.all(np.isfinite(hist.train_loss))
        # running mean of the first five epoch losses never goes up
        running = np.cumsum(hist.train_loss[:5]) / np.arange(1, 6)
        assert np.all(np.diff(running) <= 0)
        x, y = data.part("train")
        assert np.mean(predict(model, x)[1] == y) >= 0.95

    def test_logistic_starts_at_zero(self):
        model = build_model(_cfg(arch="logistic"), seed=4)
        assert not model.layer("head").weights["weight"].data.any()

    def test_single_class(self):
        rng = np.random.default_rng(0)
        data = ArraySplits(rng.normal(size=(300, 8)).astype(np.float32), np.full(300, 1),
                           np.array(["train"] * 200 + ["val"] * 50 + ["test"] * 50), 3)
        x = data.part("train")[0]
        model, _ = train(build_model(default_config(8, 3), seed=0), data, TrainConfig(epochs=10, seed=0))
        assert np.all(predict(model, x)[1] == 1)
        # the bias only outgrows Adam's sign-sized weight noise after more steps
        model, _ = train_baseline("logistic", data, TrainConfig(epochs=80, seed=0))
        assert np.all(predict(model, x)[1] == 1)

    @pytest.mark.parametrize("restore", [True, False])
    def test_checkpoint_selection(self, restore, farm_a):
        tc = TrainConfig(epochs=4, seed=1, restore_best=restore)
        cfg = ModelConfig(num_features=farm_a.num_features, num_classes=farm_a.num_classes, conv_channels=[4, 8],
                          d_model=8, heads=2, ff_width=16)
        model, hist = train(build_model(cfg, seed=0), farm_a, tc)
        x, y = farm_a.part("val")
        acc = float(np.mean(predict(model, x)[1] == y))
        if restore:
            assert hist.best_epoch == max(i + 1 for i, v in enumerate(hist.val_accuracy) if v == max(hist.val_accuracy))
            assert acc == max(hist.val_accuracy)
        else:
            assert hist.best_epoch == 4
            assert acc == hist.val_accuracy[-1]

    def test_determinism(self):
        data = separable_set(n=120)
        tc = TrainConfig(epochs=2, seed=5)
        runs = [train(build_model(default_config(8, 2), seed=3), data, tc) for _ in range(2)]
        (m1, h1), (m2, h2) = runs
        assert h1 == h2
        for (_, a), (_, b) in zip(m1.state(), m2.state()):
            assert a.tobytes() == b.tobytes()

    def test_logistic_determinism(self):
        data = separable_set(n=120)
        tc = TrainConfig(epochs=2, seed=5)
        (m1, _), (m2, _) = train_baseline("logistic", data, tc), train_baseline("logistic", data, tc)
        assert m1.state()[0][1].tobytes() == m2.state()[0][1].tobytes()

    def test_empty_split(self):
        data = separable_set(n=100)
        data.tags[data.tags == "val"] = "test"
        with pytest.raises(ValueError, match="val split is empty"):
            train(build_model(default_config(8, 2), seed=0), data, TrainConfig(epochs=1))

    def test_label_overflow(self):
        data = separable_set(n=100)
        data.y[0] = 2
        with pytest.raises(ValueError, match="labels must lie"):
            train(build_model(default_config(8, 2), seed=0), data, TrainConfig(epochs=1))

    @pytest.mark.parametrize("bad", [dict(epochs=0), dict(batch_size=0), dict(learning_rate=0.0)])
    def test_invalid_train_config(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()

    def test_unknown_baseline(self):
        with pytest.raises(ValueError):
            train_baseline("forest", separable_set(n=100), TrainConfig(epochs=1))
