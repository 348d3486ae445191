"""Desk-scale fine-tuning: plain SGD on a seeded synthetic image task.

The learning rate starts at ``base_lr`` and drops by ``lr_drop_factor``
every ``lr_drop_every`` epochs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .graph import LayerRanks, LayerSpec, NetworkSpec
from .layers import softmax_cross_entropy
from .network import Network, backward, forward, init_network
from .pipeline import compress


class TrainingDiverged(RuntimeError):
    """The loss became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-3
    lr_drop_every: int = 5
    lr_drop_factor: float = 10.0
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if not self.base_lr >= 0:
            raise ValueError("base_lr must be >= 0")
        if self.lr_drop_factor <= 1 or self.lr_drop_every < 1:
            raise ValueError("need lr_drop_factor > 1 and lr_drop_every >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("need batch_size >= 1 and epochs >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.base_lr * cfg.lr_drop_factor ** -(epoch // cfg.lr_drop_every)


@dataclass(frozen=True)
class SyntheticTask:
    """Noisy copies of one random prototype image per class.

    Classes are balanced; everything is a pure function of ``seed``.
    """

    seed: int = 0
    input_shape: tuple = (8, 8, 3)
    n_classes: int = 4
    n_train: int = 512
    n_val: int = 256
    signal: float = 1.0
    noise: float = 1.0

    def _split(self, rng, protos, n):
        y = rng.permutation(np.arange(n) % self.n_classes)
        x = self.signal * protos[y] + self.noise * rng.standard_normal((n,) + tuple(self.input_shape))
        return x, y

    def data(self):
        """``(x_train, y_train, x_val, y_val)``."""
        rng = np.random.default_rng(self.seed)
        protos = rng.standard_normal((self.n_classes,) + tuple(self.input_shape))
        xt, yt = self._split(rng, protos, self.n_train)
        xv, yv = self._split(rng, protos, self.n_val)
        return xt, yt, xv, yv


def toy_spec(task: SyntheticTask, width: int = 8) -> NetworkSpec:
    """Two 3x3 conv blocks with pooling, then a classifier."""
    layers = [
        LayerSpec("conv1", "conv", out=width, kernel=3, pad=1), LayerSpec("relu1", "relu"),
        LayerSpec("pool1", "maxpool", window=2, stride=2),
        LayerSpec("conv2", "conv", out=2 * width, kernel=3, pad=1), LayerSpec("relu2", "relu"),
        LayerSpec("pool2", "maxpool", window=2, stride=2),
        LayerSpec("fc", "fc", out=task.n_classes),
    ]
    return NetworkSpec("toy", task.input_shape, layers)


def _scores(net: Network, x: np.ndarray) -> np.ndarray:
    out = forward(net, x)
    return out.reshape(out.shape[0], -1)


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 256):
    """``(mean loss, accuracy)``."""
    losses, correct = 0.0, 0
    for i in range(0, len(x), batch_size):
        s = _scores(net, x[i:i + batch_size])
        loss, _ = softmax_cross_entropy(s, y[i:i + batch_size])
        losses += loss * len(s)
        correct += int((s.argmax(axis=1) == y[i:i + batch_size]).sum())
    return losses / len(x), correct / len(x)


def loss_and_grads(net: Network, x: np.ndarray, y: np.ndarray):
    out, caches = forward(net, x, keep=True)
    loss, dscores = softmax_cross_entropy(out.reshape(len(x), -1), y)
    return loss, backward(net, caches, dscores.reshape(out.shape))


def train(net: Network, task: SyntheticTask, cfg: TrainConfig, log=None):
    """Mini-batch SGD with cross-entropy.

    Returns ``(network, history)`` where history holds one
    ``{"epoch", "lr", "loss", "accuracy"}`` record per epoch (training loss,
    validation accuracy).  ``log`` is called with each record as it is made.
    """
    xt, yt, xv, yv = task.data()
    params = {k: dict(v) for k, v in net.params.items()}
    velocity = {k: {n: np.zeros_like(a) for n, a in v.items() if a is not None} for k, v in params.items()}
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(xt))
        total = 0.0
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            current = Network(net.spec, params)
            loss, grads = loss_and_grads(current, xt[idx], yt[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, batch {b // cfg.batch_size} "
                                       f"(lr={lr:g}); lower the learning rate")
            total += loss * len(idx)
            for name, g in grads.items():
                p = dict(params[name])
                for kind, d in g.items():
                    if d is None:
                        continue
                    if cfg.momentum:
                        v = velocity[name][kind] = cfg.momentum * velocity[name][kind] - lr * d
                        p[kind] = p[kind] + v
                    else:
                        p[kind] = p[kind] - lr * d
                params[name] = p
        net = Network(net.spec, params)
        _, acc = evaluate(net, xv, yv)
        record = {"epoch": epoch, "lr": lr, "loss": total / len(xt), "accuracy": acc}
        history.append(record)
        if log is not None:
            log(record)
    return Network(net.spec, params), history


def history_lines(history: list) -> str:
    return "".join(json.dumps(r) + "\n" for r in history)


# -- compression/recovery experiment ------------------------------------------------

TOY_LR = 0.02
TOY_PRETRAIN_EPOCHS = 10
TOY_RANKS = {"conv1": LayerRanks(r4=4), "conv2": LayerRanks(4, 6)}


def recovery_trial(seed: int, ranks: dict | None = None, task: SyntheticTask | None = None,
                   lr: float = TOY_LR, pretrain_epochs: int = TOY_PRETRAIN_EPOCHS) -> dict:
    """Train a toy net, compress it at ``ranks``, fine-tune one epoch.

    Returns validation accuracies before/after compression and after the
    fine-tuning epoch.
    """
    task = task or SyntheticTask(seed=seed)
    _, _, xv, yv = task.data()
    cfg = TrainConfig(base_lr=lr, epochs=pretrain_epochs, seed=seed)
    net, _ = train(init_network(toy_spec(task), seed=seed), task, cfg)
    original = evaluate(net, xv, yv)[1]
    small, _ = compress(net, TOY_RANKS if ranks is None else ranks)
    compressed = evaluate(small, xv, yv)[1]
    tuned, _ = train(small, task, TrainConfig(base_lr=lr, epochs=1, seed=seed + 1))
    recovered = evaluate(tuned, xv, yv)[1]
    return {"seed": seed, "original": original, "compressed": compressed, "finetuned": recovered,
            "config": asdict(cfg)}
