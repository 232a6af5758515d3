import numpy as np
import pytest

from tradeslab.attacks import AttackConfig
from tradeslab.data import gen_synthetic
from tradeslab.errors import DataError
from tradeslab.risk import evaluate
from tradeslab.theory import staircase_errors
from tradeslab.train import (
    UNLABELED, TrainConfig, class_targets, hide_labels, train, train_madry, train_natural, train_trades_binary,
    train_trades_multiclass, train_trades_semisup,
)

FAST = dict(epochs=3, batch_m=32, eta2=0.05)


@pytest.fixture(scope="module")
def data():
    return gen_synthetic("blobs", 200, 3, separation=4.0)


def test_same_seed_same_model(data):
    cfg = TrainConfig(**FAST, attack=AttackConfig(iters_K=3))
    a, b = train(data, cfg), train(data, cfg)
    assert np.array_equal(a.model.params, b.model.params)
    assert a.metrics_history == b.metrics_history
    c = train(data, cfg.replace(seed=1))
    assert not np.array_equal(a.model.params, c.model.params)


@pytest.mark.parametrize("mode", ["natural", "madry", "trades_binary", "trades_multiclass"])
def test_resume_reproduces_uninterrupted_run(data, mode):
    cfg = TrainConfig(mode=mode, epochs=4, batch_m=32, attack=AttackConfig(iters_K=2))
    full = train(data, cfg)
    half = train(data, cfg.replace(epochs=2))
    resumed = train(data, cfg, resume=half)
    assert np.array_equal(full.model.params, resumed.model.params)
    assert full.metrics_history == resumed.metrics_history


def test_zero_steps_zero_noise_multiclass_equals_natural(data):
    y01 = class_targets(data.labels)
    cfg = TrainConfig(mode="trades_multiclass", **FAST, attack=AttackConfig(iters_K=0, init_sigma=0.0))
    a = train((data.features, y01), cfg)
    b = train((data.features, y01), cfg.replace(mode="natural"))
    assert np.array_equal(a.model.params, b.model.params)


def test_zero_radius_madry_equals_natural(data):
    cfg = TrainConfig(mode="madry", **FAST, attack=AttackConfig(epsilon=0.0, iters_K=3))
    a = train(data, cfg)
    b = train(data, cfg.replace(mode="natural"))
    assert np.array_equal(a.model.params, b.model.params)


def test_inv_lambda_zero_binary_trades_equals_natural(data):
    cfg = TrainConfig(mode="trades_binary", inv_lambda=0.0, surrogate="hinge", **FAST,
                      attack=AttackConfig(iters_K=2))
    a = train(data, cfg)
    b = train(data, cfg.replace(mode="natural"))
    assert np.array_equal(a.model.params, b.model.params)


@pytest.mark.parametrize("mode", ["trades_binary", "trades_multiclass"])
def test_batch_loss_is_sum_of_logged_terms(data, mode):
    log = []
    train(data, TrainConfig(mode=mode, inv_lambda=2.5, **FAST, attack=AttackConfig(iters_K=2)), batch_log=log)
    assert log
    for entry in log:
        assert np.isclose(entry["loss"], entry["term1"] + entry["weight"] * entry["term2"], rtol=0, atol=1e-12)


def test_last_partial_batch_is_used(data):
    log = []
    train(data, TrainConfig(mode="natural", epochs=1, batch_m=64), batch_log=log)
    assert [e["n"] for e in log] == [64, 64, 64, 8]


def test_training_lowers_error(data):
    for fn in (train_natural, train_madry, train_trades_binary, train_trades_multiclass):
        ck = fn(data, TrainConfig(epochs=15, batch_m=32, eta2=0.05, attack=AttackConfig(iters_K=3)))
        assert ck.metrics_history[-1]["train_r_nat"] < 0.1
        assert ck.metrics_history[-1]["loss"] < ck.metrics_history[0]["loss"]


def test_unlabeled_examples_need_semisupervised_mode(data):
    y = hide_labels(data.labels, 0.3, 0)
    assert np.sum(y == UNLABELED) == 60
    with pytest.raises(DataError):
        train((data.features, y), TrainConfig(**FAST))
    with pytest.raises(DataError):
        train((data.features, y), TrainConfig(mode="natural", **FAST, unlabeled_fraction=0.3))
    ck = train((data.features, y), TrainConfig(**FAST, unlabeled_fraction=0.3))
    assert ck.model.out_dim == 2


def test_semisupervised_terms_use_the_right_examples(data):
    labeled = data.subset(np.arange(100))
    unlabeled = data.features[100:]
    log = []
    ck = train_trades_semisup(labeled, unlabeled, TrainConfig(**FAST, attack=AttackConfig(iters_K=2)), batch_log=log)
    assert sum(e["n"] for e in log) == 3 * 200
    assert sum(e["n_labeled"] for e in log) == 3 * 100
    assert evaluate(ck.model, labeled, 0.0).r_nat < 0.2


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="bogus")
    with pytest.raises(ValueError):
        TrainConfig(inv_lambda=-1)
    with pytest.raises(DataError):
        train(gen_synthetic("blobs", 10, 0), TrainConfig(batch_m=64))
    with pytest.raises(DataError):
        train((np.zeros((4, 2)), np.array([0, 1, 2, 3])), TrainConfig(mode="trades_binary"))


def test_trades_on_staircase_beats_bayes_robust_error():
    data = gen_synthetic("staircase_sample", 600, 0, eps=0.1)
    cfg = TrainConfig(mode="trades_binary", inv_lambda=5.0, epochs=20, batch_m=32, eta2=0.05, hidden=(16,),
                      attack=AttackConfig(epsilon=0.1, step_eta1=0.05, iters_K=5))
    ck = train(data, cfg)
    _, _, r_rob = staircase_errors(lambda X: ck.model(X)[:, 0], 0.1)
    assert r_rob < 1
