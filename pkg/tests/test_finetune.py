import numpy as np
import pytest

from tuckershot.finetune import (TOY_LR, SyntheticTask, TrainConfig, TrainingDiverged, evaluate, history_lines,
                                 loss_and_grads, lr_at, recovery_trial, toy_spec, train)
from tuckershot.network import init_network


@pytest.fixture(scope="module")
def task():
    return SyntheticTask(seed=0)


def test_step_schedule():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 1e-3
    assert lr_at(4, cfg) == 1e-3
    assert lr_at(5, cfg) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at(12, cfg) == pytest.approx(1e-5, rel=1e-12)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


@pytest.mark.parametrize("kw", [dict(base_lr=-1), dict(lr_drop_factor=1), dict(lr_drop_every=0),
                                dict(batch_size=0), dict(epochs=-1), dict(momentum=1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_task_is_seeded_and_balanced():
    a, b = SyntheticTask(seed=5).data(), SyntheticTask(seed=5).data()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    assert not np.array_equal(a[0], SyntheticTask(seed=6).data()[0])
    assert np.bincount(a[1]).tolist() == [128] * 4


def test_zero_lr_leaves_weights_bitwise_unchanged(task):
    net = init_network(toy_spec(task), seed=1)
    tuned, history = train(net, task, TrainConfig(base_lr=0.0, epochs=1))
    assert len(history) == 1
    for name in net.params:
        for kind, a in net.params[name].items():
            assert np.array_equal(a, tuned.params[name][kind])


def test_zero_epochs_is_identity(task):
    net = init_network(toy_spec(task), seed=1)
    tuned, history = train(net, task, TrainConfig(epochs=0))
    assert history == []
    assert all(np.array_equal(net.weight(n), tuned.weight(n)) for n in net.params)


def test_training_is_deterministic(task):
    net = init_network(toy_spec(task), seed=2)
    cfg = TrainConfig(base_lr=0.01, epochs=2, seed=3, momentum=0.5)
    a, ha = train(net, task, cfg)
    b, hb = train(net, task, cfg)
    assert ha == hb
    assert all(np.array_equal(a.weight(n), b.weight(n)) for n in a.params)
    c, _ = train(net, task, TrainConfig(base_lr=0.01, epochs=2, seed=4, momentum=0.5))
    assert not np.array_equal(a.weight("fc"), c.weight("fc"))


def test_history_records_schedule(task):
    logged = []
    net = init_network(toy_spec(task), seed=0)
    _, history = train(net, task, TrainConfig(base_lr=0.0, epochs=6, lr_drop_every=5), log=logged.append)
    assert logged == history
    assert [r["epoch"] for r in history] == list(range(6))
    assert [r["lr"] for r in history] == [0.0] * 6
    assert history_lines(history).count("\n") == 6


def test_first_epoch_reduces_training_loss():
    improved = 0
    for seed in range(10):
        task = SyntheticTask(seed=seed)
        xt, yt, _, _ = task.data()
        net = init_network(toy_spec(task), seed=seed)
        before = evaluate(net, xt, yt)[0]
        tuned, _ = train(net, task, TrainConfig(seed=seed))
        improved += evaluate(tuned, xt, yt)[0] < before
    assert improved >= 9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(task):
    net = init_network(toy_spec(task), seed=0)
    with pytest.raises(TrainingDiverged, match="learning rate"):
        train(net, task, TrainConfig(base_lr=1e200, epochs=3))


def test_gradients_match_finite_differences(task, rng):
    net = init_network(toy_spec(task), seed=0)
    xt, yt, _, _ = task.data()
    x, y = xt[:4], yt[:4]
    _, grads = loss_and_grads(net, x, y)
    w = net.weight("conv2")
    eps = 1e-6
    for _ in range(5):
        idx = tuple(rng.integers(0, s) for s in w.shape)
        wp, wm = w.copy(), w.copy()
        wp[idx] += eps
        wm[idx] -= eps
        lp = loss_and_grads(net.with_params("conv2", weight=wp), x, y)[0]
        lm = loss_and_grads(net.with_params("conv2", weight=wm), x, y)[0]
        assert grads["conv2"]["weight"][idx] == pytest.approx((lp - lm) / (2 * eps), rel=1e-4, abs=1e-8)


def test_toy_net_learns_the_task(task):
    _, _, xv, yv = task.data()
    net, history = train(init_network(toy_spec(task), seed=0), task, TrainConfig(base_lr=TOY_LR, epochs=10))
    assert evaluate(net, xv, yv)[1] >= 0.95
    assert history[-1]["accuracy"] >= 0.95


def test_recovery_trial_finetuning_does_not_hurt():
    r = recovery_trial(0)
    assert r["original"] >= 0.95
    assert r["finetuned"] >= r["compressed"]
