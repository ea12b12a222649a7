# trainer.py
"""
Optimization recipe: classical-momentum SGD with decoupled masks for weight
decay, epoch-level cosine annealing without restarts, softmax cross-entropy,
and accuracy evaluation.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import Config
from data import AugmentConfig, Cifar10Set, batches
from extensions import progress_enabled
from models import ModelGraph, backward, forward, predict
from utils.checkpoint import save_checkpoint
from utils.errors import NonFiniteGradient, TrainingDiverged

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "lr", "train_loss", "train_acc", "test_acc", "seconds"]

# parameter names that never receive weight decay
_NO_DECAY = {"bias", "b1", "b2", "gamma", "beta"}


# ---------- types ----------
@dataclass
class TrainConfig:
    epochs:           int = Config.EPOCHS
    base_lr:          float = Config.BASE_LR
    momentum:         float = Config.MOMENTUM
    weight_decay:     float = Config.WEIGHT_DECAY
    batch_size:       int = Config.BATCH_SIZE
    seed:             int = Config.SEED
    subset_size:      int | None = None
    test_subset_size: int | None = None
    eval_batch_size:  int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.base_lr <= 0 or self.momentum <= 0 or self.weight_decay <= 0:
            raise ValueError("base_lr, momentum and weight_decay must be positive")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        for name in ("subset_size", "test_subset_size"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch:      int
    lr:         float
    train_loss: float
    train_acc:  float
    test_acc:   float | None
    seconds:    float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    config:  dict = field(default_factory=dict)

    def append(self, rec: EpochRecord) -> None:
        expected = len(self.records) + 1
        if rec.epoch != expected:
            raise ValueError(f"train log: epoch {rec.epoch} recorded, expected {expected}")
        self.records.append(rec)

    @property
    def final_test_acc(self) -> float | None:
        return self.records[-1].test_acc if self.records else None

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=LOG_COLUMNS)

    def to_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator="\n")
        return path

    def to_dict(self) -> dict:
        return {"config": self.config, "records": [asdict(r) for r in self.records]}

    def to_json(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "TrainLog":
        out = cls(config=d.get("config", {}))
        for r in d.get("records", []):
            out.append(EpochRecord(**r))
        return out

    @classmethod
    def from_json(cls, path: str) -> "TrainLog":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass
class TrainData:
    train:   Cifar10Set
    test:    Cifar10Set | None = None
    augment: AugmentConfig | None = None


# ---------- schedule / objective / optimizer ----------
def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"cosine_lr: epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"cross_entropy: labels must lie in 0..{c - 1}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - shifted[rows, labels]))
    grad = np.exp(shifted - lse[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def decay_mask(graph: ModelGraph) -> set[str]:
    """Conv, linear and attention weights; never BN affine terms or biases."""
    return {
        name for name, _, node in graph.named_parameters()
        if node.kind in ("conv", "linear", "attention") and name.rsplit(".", 1)[1] not in _NO_DECAY
    }


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
    decay: set[str] | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """g = grad + wd*p (decayed names only); v = momentum*v + g; p -= lr*v.
    Updates in place and returns (params, velocity)."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        log.error("non-finite gradients in %s; step skipped", bad[:5])
        raise NonFiniteGradient(f"non-finite gradients in {bad[:5]}")
    decay = set(params) if decay is None else decay
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"sgd_step: grad shape {g.shape} != param shape {p.shape} for '{name}'")
        if weight_decay and name in decay:
            g = g + weight_decay * p
        v = velocity.get(name)
        v = g.astype(np.float64, copy=True) if v is None else momentum * v + g
        velocity[name] = v
        p -= (lr * v).astype(p.dtype, copy=False)
    return params, velocity


# ---------- evaluation ----------
def evaluate(
    model: ModelGraph | Callable[[np.ndarray], np.ndarray],
    test_set: Cifar10Set,
    batch_size: int = 256,
    cfg: AugmentConfig | None = None,
) -> float:
    """Top-1 accuracy over the whole split (argmax ties go to the lowest index)."""
    if len(test_set) == 0:
        return 0.0
    run = model if callable(model) else partial(predict, model)
    correct = 0
    for x, y in batches(test_set, batch_size, cfg=cfg, shuffle=False):
        correct += int((np.argmax(run(x), axis=1) == y).sum())
    return correct / len(test_set)


# ---------- training ----------
def _snapshot(graph: ModelGraph) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in graph.state_dict().items()}


def _diverged(graph, good, epoch, checkpoint_path, seed, reason) -> TrainingDiverged:
    graph.cache = None
    graph.load_state_dict(good)
    path = None
    if checkpoint_path:
        path = save_checkpoint(graph, checkpoint_path, seed=seed, extra={"diverged_at_epoch": epoch})
    log.error("training diverged at epoch %d (%s); restored last good parameters%s",
              epoch, reason, f", saved to {path}" if path else "")
    return TrainingDiverged(f"training diverged at epoch {epoch}: {reason}", epoch, path)


def train(
    graph: ModelGraph,
    data: TrainData,
    cfg: TrainConfig,
    checkpoint_path: str | None = None,
) -> tuple[ModelGraph, TrainLog]:
    """Run the full recipe on an initialized graph. Deterministic for a given
    ``cfg.seed`` on the single-threaded reference path."""
    train_log = TrainLog(config={**cfg.to_dict(), "model": graph.config.to_dict()})
    params = {name: pair.value for name, pair, _ in graph.named_parameters()}
    decay = decay_mask(graph)
    velocity: dict[str, np.ndarray] = {}
    good = _snapshot(graph)
    show = progress_enabled(log)

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        t0 = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        n_batches = math.ceil(len(data.train) / cfg.batch_size)
        it = batches(data.train, cfg.batch_size, cfg.seed, epoch, data.augment)
        for x, y in tqdm(it, total=n_batches, desc=f"epoch {epoch + 1}/{cfg.epochs}", disable=not show, leave=False):
            logits = forward(graph, x, training=True)
            loss, g = cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise _diverged(graph, good, epoch + 1, checkpoint_path, cfg.seed, f"loss={loss}")
            grads = backward(graph, x, g)
            graph.cache = None
            try:
                sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay, decay)
            except NonFiniteGradient as e:
                raise _diverged(graph, good, epoch + 1, checkpoint_path, cfg.seed, str(e)) from e
            loss_sum += loss * len(y)
            correct += int((np.argmax(logits, axis=1) == y).sum())
            seen += len(y)

        test_acc = None
        if data.test is not None:
            test_acc = evaluate(graph, data.test, cfg.eval_batch_size, data.augment)
        rec = EpochRecord(
            epoch=epoch + 1,
            lr=lr,
            train_loss=loss_sum / seen,
            train_acc=correct / seen,
            test_acc=test_acc,
            seconds=time.perf_counter() - t0,
        )
        train_log.append(rec)
        good = _snapshot(graph)
        log.info("epoch %d/%d lr=%.5f loss=%.4f train_acc=%.4f test_acc=%s (%.1fs)",
                 rec.epoch, cfg.epochs, lr, rec.train_loss, rec.train_acc,
                 f"{test_acc:.4f}" if test_acc is not None else "-", rec.seconds)

    if checkpoint_path:
        save_checkpoint(graph, checkpoint_path, seed=cfg.seed, extra={"train_config": cfg.to_dict()})
    return graph, train_log
