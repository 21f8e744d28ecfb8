"""Training a network on the labeled pool: per-epoch fresh augmentation,
class-weighted cross-entropy, Adam, and early stopping with best-snapshot
restore.

Class weights counter the imbalance that confusion-driven selection
introduces: weight(c) = max(ln(mu * total / count_c), 1.0). Weights are
recomputed once per labeling iteration (the labeled set is constant within
one training run).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .augment import AugmentPolicy, augment
from .data import ClassDistribution, Dataset, Pool
from .seeds import rng_for

log = logging.getLogger(__name__)


class TrainError(Exception):
    pass


@dataclass
class TrainConfig:
    adam: nn.AdamConfig = field(default_factory=nn.AdamConfig)
    batch_size: int = 32
    patience_epochs: int = 100
    max_epochs: int = 2000
    mu: float = 0.3
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    seed: int = 0

    def __post_init__(self):
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mu <= 0:
            raise ValueError("mu must be > 0")


@dataclass
class TrainReport:
    epochs_run: int
    best_epoch: int
    best_validation_accuracy: float
    history: list[tuple[float, float]]  # per epoch: (train_loss, val_accuracy)


def class_weights(counts, mu: float) -> np.ndarray:
    """Per-class loss weights max(ln(mu*t/c), 1.0); natural log.

    A zero-count class is weighted as if it had one sample (the formula is
    undefined at c = 0 and an absent class cannot dominate the loss anyway).
    """
    if isinstance(counts, ClassDistribution):
        counts = counts.counts
    counts = np.asarray(counts, dtype=np.float64)
    t = counts.sum()
    if t <= 0:
        raise ValueError("total count must be > 0")
    c = np.maximum(counts, 1.0)
    return np.maximum(np.log(mu * t / c), 1.0)


class EarlyStopper:
    """Stop after ``patience`` epochs without strict validation improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_value = -np.inf
        self.best_epoch = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch's metric; returns True when training should stop."""
        if value > self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            return False
        return epoch - self.best_epoch >= self.patience


def evaluate(net: nn.Network, ds: Dataset, ids, labels: dict[int, int] | None = None,
             batch_size: int = 512) -> float:
    """Un-augmented eval-mode accuracy over ``ids``. Argmax ties resolve to
    the lowest class index."""
    ids = sorted(int(i) for i in ids)
    if not ids:
        raise TrainError("evaluate needs a nonempty id set")
    correct = 0
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        probs = net.forward(ds.images[chunk], train=False)
        pred = np.argmax(probs, axis=1)
        truth = np.array([labels[i] if labels and i in labels else int(ds.labels[i])
                          for i in chunk])
        correct += int((pred == truth).sum())
    return correct / len(ids)


def train(net: nn.Network, ds: Dataset, pool: Pool, cfg: TrainConfig,
          labels: dict[int, int] | None = None) -> tuple[nn.Network, TrainReport]:
    """Train on the labeled pool until validation accuracy stalls.

    Every epoch re-augments every labeled sample from a fresh seeded draw,
    so the network never sees the same image twice. Returns the best-epoch
    parameter snapshot and the per-epoch history.
    """
    labeled = sorted(pool.labeled_ids)
    if not labeled:
        raise TrainError("labeled pool is empty")
    if not pool.validation_ids:
        raise TrainError("validation pool is empty")

    label_of = {i: (labels[i] if labels and i in labels else int(ds.labels[i]))
                for i in labeled}
    counts = np.bincount([label_of[i] for i in labeled], minlength=ds.num_classes)
    weights = class_weights(counts, cfg.mu).astype(np.float64)

    stopper = EarlyStopper(cfg.patience_epochs)
    best_net = net.copy()
    history: list[tuple[float, float]] = []

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(labeled))
        epoch_ids = [labeled[i] for i in order]
        losses = []
        for bstart in range(0, len(epoch_ids), cfg.batch_size):
            bids = epoch_ids[bstart:bstart + cfg.batch_size]
            batch = np.stack([
                augment(ds.sample(i), cfg.policy, rng_for(cfg.seed, "aug", epoch, i)).pixels
                for i in bids
            ])
            targets = np.array([label_of[i] for i in bids])
            drop_rng = rng_for(cfg.seed, "dropout", epoch, bstart)
            probs = net.forward(batch, train=True, rng=drop_rng)
            loss, dlogits = nn.weighted_cross_entropy(probs, targets, weights)
            grads = net.backward(dlogits)
            nn.adam_step(net, grads, cfg.adam)
            losses.append(loss)

        val_acc = evaluate(net, ds, pool.validation_ids)
        train_loss = float(np.mean(losses))
        improved = val_acc > stopper.best_value
        stop = stopper.update(epoch, val_acc)
        if improved:
            best_net = net.copy()
        history.append((train_loss, val_acc))
        log.info("epoch=%d train_loss=%.6f val_accuracy=%.6f best=%.6f",
                 epoch, train_loss, val_acc, stopper.best_value)
        if stop:
            break

    report = TrainReport(
        epochs_run=len(history),
        best_epoch=stopper.best_epoch,
        best_validation_accuracy=float(stopper.best_value),
        history=history,
    )
    return best_net, report
