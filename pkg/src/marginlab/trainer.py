"""Mini-batch SGD training of a small embedding model under any loss head.

The model is an optional ReLU hidden layer followed by an affine map to the
embedding space, plus the class-center matrix ``W`` that the heads compare
against. Boundary heads run as their plain margin variant for the first
``warmup_epochs`` epochs.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .heads import (
    BOUNDARY_KINDS,
    HeadConfig,
    HeadKind,
    backward,
    forward_loss,
    warmup_variant,
)
from .hypersphere import cosine_matrix, normalize
from .noisegen import NoiseLedger, NoisyDataset

REFERENCE_EPOCHS = 30
REFERENCE_MILESTONES = (6, 12, 19)
REFERENCE_WARMUP = 7

METRICS_HEADER = [
    "epoch", "iter", "loss", "lr", "detected",
    "correct_corrections", "wrong_corrections", "hard_count",
]


@dataclass
class EmbeddingModel:
    params: dict[str, np.ndarray]
    state: dict[str, float] = field(default_factory=dict)  # e.g. Curricular EMA t

    @classmethod
    def init(cls, input_dim: int, embed_dim: int, num_classes: int,
             hidden_dim: int = 0, out_bias: bool = False, seed=0) -> "EmbeddingModel":
        """Random initial parameters.

        The output bias is off by default: a shared offset survives feature
        normalization and can swamp the class-dependent directions.
        """
        rng = np.random.default_rng(seed)
        params = {}
        fan_in = input_dim
        if hidden_dim:
            params["hidden.weight"] = rng.standard_normal((input_dim, hidden_dim)) * math.sqrt(2.0 / input_dim)
            params["hidden.bias"] = np.zeros(hidden_dim)
            fan_in = hidden_dim
        params["out.weight"] = rng.standard_normal((fan_in, embed_dim)) / math.sqrt(fan_in)
        if out_bias:
            params["out.bias"] = np.zeros(embed_dim)
        params["centers"] = rng.standard_normal((num_classes, embed_dim))
        return cls(params)

    @property
    def centers(self) -> np.ndarray:
        return self.params["centers"]

    @property
    def has_hidden(self) -> bool:
        return "hidden.weight" in self.params

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel({k: v.copy() for k, v in self.params.items()}, dict(self.state))

    def forward(self, inputs):
        x = np.asarray(inputs, dtype=np.float64)
        cache = {"x": x}
        if self.has_hidden:
            pre = x @ self.params["hidden.weight"] + self.params["hidden.bias"]
            x = np.maximum(pre, 0.0)
            cache["pre"] = pre
            cache["h"] = x
        return x @ self.params["out.weight"] + self.params.get("out.bias", 0.0), cache

    def embed(self, inputs) -> np.ndarray:
        return self.forward(inputs)[0]

    def backward(self, cache, grad_features) -> dict[str, np.ndarray]:
        """Parameter gradients (all but ``centers``) from d loss / d features."""
        grads = {}
        h = cache.get("h", cache["x"])
        grads["out.weight"] = h.T @ grad_features
        if "out.bias" in self.params:
            grads["out.bias"] = grad_features.sum(axis=0)
        if self.has_hidden:
            gh = (grad_features @ self.params["out.weight"].T) * (cache["pre"] > 0)
            grads["hidden.weight"] = cache["x"].T @ gh
            grads["hidden.bias"] = gh.sum(axis=0)
        return grads


def _scaled_milestones(epochs: int) -> tuple[int, ...]:
    scaled = sorted({int(round(m * epochs / REFERENCE_EPOCHS)) for m in REFERENCE_MILESTONES})
    return tuple(m for m in scaled if 0 < m < epochs)


@dataclass(frozen=True)
class TrainConfig:
    """SGD schedule and warm-up settings.

    ``lr_milestones`` and ``warmup_epochs`` default to the 30-epoch recipe
    (drops at 6/12/19, 7 warm-up epochs) rescaled to ``epochs``.
    """

    head: HeadConfig
    epochs: int = 30
    warmup_epochs: int | None = None
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_milestones: tuple[int, ...] | None = None
    seed: int = 0
    warmup_disable_correction: bool = True
    warmup_disable_mining: bool = True
    persistent_correction: bool = False

    def __post_init__(self):
        if self.warmup_epochs is None:
            object.__setattr__(self, "warmup_epochs", int(round(REFERENCE_WARMUP * self.epochs / REFERENCE_EPOCHS)))
        if self.lr_milestones is None:
            object.__setattr__(self, "lr_milestones", _scaled_milestones(self.epochs))
        else:
            object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs)")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("invalid optimizer settings")
        ms = self.lr_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("lr_milestones must be strictly increasing")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Step schedule: divide the base rate by 10 at each milestone passed."""
    if not 0 <= epoch < config.epochs:
        raise ValueError("epoch out of range")
    passed = sum(1 for m in config.lr_milestones if m <= epoch)
    return config.lr / 10.0**passed


def sgd_step(params, grads, velocity, lr, momentum, weight_decay):
    """Momentum SGD with L2 folded into the velocity.

    ``v <- momentum * v + g + weight_decay * p``; ``p <- p - lr * v``.
    Works on a single array or a dict of arrays; returns new objects.
    """
    if isinstance(params, dict):
        new_p, new_v = {}, {}
        for k in params:
            new_p[k], new_v[k] = sgd_step(params[k], grads[k], velocity[k], lr, momentum, weight_decay)
        return new_p, new_v
    v = momentum * velocity + grads + weight_decay * params
    return params - lr * v, v


@dataclass
class IterationMetrics:
    epoch: int
    iteration: int
    loss: float
    lr: float
    detected: int
    correct: int | None
    wrong: int | None
    hard_count: int

    def row(self) -> list[str]:
        def opt(v):
            return "" if v is None else str(v)
        return [str(self.epoch), str(self.iteration), repr(self.loss), repr(self.lr),
                str(self.detected), opt(self.correct), opt(self.wrong), str(self.hard_count)]


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    lr: float
    detected: int
    correct: int | None
    wrong: int | None
    hard_count: int
    verification_accuracy: float | None = None


@dataclass
class MetricsLog:
    iterations: list[IterationMetrics] = field(default_factory=list)
    verification: dict[int, float] = field(default_factory=dict)

    @property
    def has_ledger(self) -> bool:
        return bool(self.iterations) and self.iterations[0].correct is not None

    def epochs(self) -> list[EpochMetrics]:
        groups: dict[int, list[IterationMetrics]] = {}
        for it in self.iterations:
            groups.setdefault(it.epoch, []).append(it)
        out = []
        for epoch, rows in sorted(groups.items()):
            ledger = rows[0].correct is not None
            out.append(EpochMetrics(
                epoch=epoch,
                loss=float(np.mean([r.loss for r in rows])),
                lr=rows[0].lr,
                detected=sum(r.detected for r in rows),
                correct=sum(r.correct for r in rows) if ledger else None,
                wrong=sum(r.wrong for r in rows) if ledger else None,
                hard_count=sum(r.hard_count for r in rows),
                verification_accuracy=self.verification.get(epoch),
            ))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for it in self.iterations:
            w.writerow(it.row())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsLog":
        rows = list(csv.DictReader(io.StringIO(text)))
        def opt(v):
            return None if v == "" else int(v)
        its = [
            IterationMetrics(int(r["epoch"]), int(r["iter"]), float(r["loss"]), float(r["lr"]),
                             int(r["detected"]), opt(r["correct_corrections"]),
                             opt(r["wrong_corrections"]), int(r["hard_count"]))
            for r in rows
        ]
        return cls(its)


def _truth(data: NoisyDataset, ledger: NoiseLedger | None):
    if ledger is None:
        return None, None
    return ledger.clean_labels(data.labels), ledger.open_mask(len(data))


def train_step(model: EmbeddingModel, head: HeadConfig, inputs, labels):
    """Loss, forward record and parameter gradients for one batch."""
    feats, cache = model.forward(inputs)
    cos = cosine_matrix(normalize(feats), normalize(model.centers))
    result = forward_loss(head, cos, labels)
    gfeat, gcenters = backward(head, result.records, feats, model.centers)
    grads = model.backward(cache, gfeat)
    grads["centers"] = gcenters
    return result, grads


def train(model: EmbeddingModel, data: NoisyDataset, ledger: NoiseLedger | None,
          config: TrainConfig,
          evaluate: Callable[[EmbeddingModel], float] | None = None):
    """Run the full schedule; returns ``(trained_model, MetricsLog)``.

    With a ledger attached every iteration also counts how many label
    corrections restored the true label. ``evaluate`` (optional) is called
    on the model after each epoch and its value is stored as that epoch's
    verification accuracy. The input model is not modified.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    labels = data.labels.copy()
    true_labels, open_mask = _truth(data, ledger)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    t_state = config.head.t
    log = MetricsLog()
    iteration = 0

    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        base = config.head
        if epoch < config.warmup_epochs:
            base = warmup_variant(base, config.warmup_disable_correction, config.warmup_disable_mining)
        perm = rng.permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            idx = perm[start:start + config.batch_size]
            head = base if base.kind is not HeadKind.CURRICULAR else replace(base, t=t_state)
            result, grads = train_step(model, head, data.inputs[idx], labels[idx])
            if result.t is not None:
                t_state = result.t
            model.params, velocity = sgd_step(
                model.params, grads, velocity, lr, config.momentum, config.weight_decay)

            rec = result.records
            detected = int(rec.corrected.sum())
            correct = wrong = None
            if true_labels is not None:
                ok = rec.corrected & (rec.effective_label == true_labels[idx]) & ~open_mask[idx]
                correct = int(ok.sum())
                wrong = detected - correct
            if config.persistent_correction and head.kind in BOUNDARY_KINDS:
                labels[idx] = rec.effective_label
            log.iterations.append(IterationMetrics(
                epoch, iteration, result.loss, lr, detected, correct, wrong, int(rec.hard.sum())))
            iteration += 1
        if evaluate is not None:
            log.verification[epoch] = float(evaluate(model))

    if config.head.kind is HeadKind.CURRICULAR:
        model.state["t"] = t_state
    return model, log


def _flat_params(params):
    return [(k, idx) for k in params for idx in np.ndindex(params[k].shape)]


def finite_diff_audit(model: EmbeddingModel, inputs, labels, head: HeadConfig,
                      h: float = 1e-6, grad_fn=None) -> float:
    """Worst-case analytic vs central-difference gradient mismatch.

    Returns ``max |analytic - numeric| / max(max |numeric|, 1e-8)`` over
    every model parameter, the centers included. ``grad_fn`` replaces the
    analytic gradient (used to test that the audit catches bad gradients).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if grad_fn is None:
        _, analytic = train_step(model, head, inputs, labels)
    else:
        analytic = grad_fn(model, head, inputs, labels)

    probe = model.copy()

    def loss():
        feats, _ = probe.forward(inputs)
        cos = cosine_matrix(normalize(feats), normalize(probe.centers))
        return forward_loss(head, cos, labels).loss

    worst_diff = 0.0
    worst_num = 0.0
    for name, idx in _flat_params(probe.params):
        p = probe.params[name]
        orig = p[idx]
        p[idx] = orig + h
        up = loss()
        p[idx] = orig - h
        down = loss()
        p[idx] = orig
        num = (up - down) / (2.0 * h)
        worst_diff = max(worst_diff, abs(analytic[name][idx] - num))
        worst_num = max(worst_num, abs(num))
    return worst_diff / max(worst_num, 1e-8)
