"""Loss, optimizers, single-epoch mini-batch training and accuracy evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet
from .errors import ConfigError, ContractError
from .models import ClassProbabilities, Classifier


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 12
    epochs: int = 1
    optimizer: str = "sgd"
    seed: int = 0
    clip_epsilon: float = 1e-12

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not 0 < self.clip_epsilon < 0.5:
            raise ConfigError(f"clip_epsilon must lie in (0, 0.5), got {self.clip_epsilon}")


@dataclass
class LossTrace:
    losses: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)

    def to_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            fh.write("batch,loss\n")
            for i, loss in enumerate(self.losses):
                fh.write(f"{i},{loss!r}\n")


@dataclass(frozen=True)
class Metrics:
    """Accuracy and confusion counts, CORE_DAMAGE taken as the positive class.

    ``tp``: damage predicted as damage, ``tn``: ok as ok, ``fp``: ok predicted
    as damage, ``fn``: damage predicted as ok.
    """

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n

    def row(self, split: str) -> str:
        return f"{split},{self.accuracy!r},{self.tp},{self.tn},{self.fp},{self.fn},{self.n}"

    def summary(self, split: str) -> str:
        return (f"{split:<10} accuracy {100 * self.accuracy:6.2f}%  "
                f"(tp={self.tp} tn={self.tn} fp={self.fp} fn={self.fn} n={self.n})")


METRICS_HEADER = "split,accuracy,tp,tn,fp,fn,n"


def write_metrics(rows: dict[str, Metrics], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(METRICS_HEADER + "\n")
        for split, m in rows.items():
            fh.write(m.row(split) + "\n")


def cross_entropy(p: ClassProbabilities, y: int, eps: float = 1e-12) -> float:
    """Binary cross-entropy on the probability of class OK, clipped into [eps, 1-eps]."""
    p_hat = min(max(p.p_ok, eps), 1.0 - eps)
    return -(y * math.log(p_hat) + (1 - y) * math.log(1.0 - p_hat))


def sgd_step(params: ParameterSet, lr: float) -> ParameterSet:
    """In-place ``theta -= lr * grad`` on every parameter, then reset gradients."""
    for node in params.values():
        node.value -= lr * node.grad
    params.zero_grad()
    return params


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParameterSet) -> ParameterSet:
        self.t += 1
        for name, node in params.items():
            g = node.grad
            m = self.m.get(name, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            node.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        params.zero_grad()
        return params


def batch_loss(model: Classifier, xs: Sequence[np.ndarray], ys: Sequence[int],
               eps: float = 1e-12) -> ad.Node:
    """Mean cross-entropy over a batch as a differentiable 1x1 node."""
    return ad.mean_scalars([ad.binary_cross_entropy(model.forward(x), int(y), eps)
                            for x, y in zip(xs, ys)])


def train_one_epoch(model: Classifier, xs: Sequence[np.ndarray], ys: Sequence[int],
                    cfg: TrainConfig, progress=None) -> LossTrace:
    """Mini-batch training for ``cfg.epochs`` passes (one by default).

    Each pass shuffles with a generator seeded by ``cfg.seed`` and records the
    mean loss of every batch before its update.
    """
    if len(xs) == 0:
        raise ContractError("training split is empty")
    if len(xs) != len(ys):
        raise ContractError("one label per training scenario required")
    for x in xs:
        model.check_input(x)
    rng = np.random.default_rng(cfg.seed)
    adam = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None
    model.params.zero_grad()
    trace = LossTrace()
    n, bs = len(xs), cfg.batch_size
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss = batch_loss(model, [xs[i] for i in idx], [ys[i] for i in idx], cfg.clip_epsilon)
            ad.backward(loss)
            if adam is None:
                sgd_step(model.params, cfg.learning_rate)
            else:
                adam.step(model.params)
            trace.losses.append(float(loss.value[0, 0]))
            if progress is not None:
                progress(len(trace), trace.losses[-1])
    return trace


def confusion(predicted: Sequence[int], actual: Sequence[int]) -> Metrics:
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    return Metrics(
        tp=int(np.sum((predicted == 0) & (actual == 0))),
        tn=int(np.sum((predicted == 1) & (actual == 1))),
        fp=int(np.sum((predicted == 0) & (actual == 1))),
        fn=int(np.sum((predicted == 1) & (actual == 0))),
    )


def predict(model: Classifier, xs: Sequence[np.ndarray]) -> list[int]:
    return [model.predict_proba(x).predicted for x in xs]


def evaluate(model: Classifier, xs: Sequence[np.ndarray], ys: Sequence[int]) -> Metrics:
    if len(xs) == 0:
        raise ContractError("cannot evaluate on an empty split")
    if len(xs) != len(ys):
        raise ContractError("one label per scenario required")
    return confusion(predict(model, xs), [int(y) for y in ys])
