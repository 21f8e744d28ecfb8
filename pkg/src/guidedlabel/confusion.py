"""Response-distribution-entropy scoring.

The entropy (in bits) of a classifier's per-class probability vector
measures how confused the model is about a sample: 0 for a one-hot
prediction, log2(num_classes) for a uniform one. Samples are scored by the
mean entropy over k random augmentations, and the highest-scoring ones are
selected for labeling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .augment import AugmentPolicy, ImageSample, augment
from .seeds import rng_for

_PROB_FLOOR = 1e-12  # clamp before log so denormal softmax outputs stay finite


@dataclass(frozen=True)
class RdeScore:
    sample_id: int
    mean_rde_bits: float
    k: int


class SelectionError(Exception):
    """Asked for more samples than are available."""

    def __init__(self, requested: int, available: int):
        self.requested = requested
        self.available = available
        super().__init__(f"requested {requested} samples, only {available} available")


def rde(probs: np.ndarray) -> float:
    """Shannon entropy in bits of one probability vector, with 0*log(0) = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.min() < -1e-9:
        raise ValueError(f"negative probability {p.min()}")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    p = np.where(p < _PROB_FLOOR, 0.0, p)  # 0 * log2(0) = 0
    terms = np.zeros_like(p)
    nz = p > 0
    terms[nz] = p[nz] * np.log2(p[nz])
    return float(-terms.sum())


def rde_rows(probs: np.ndarray) -> np.ndarray:
    """Entropy in bits per row of a (N, C) probability matrix."""
    p = np.asarray(probs, dtype=np.float64)
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=1, keepdims=True)
    p = np.where(p < _PROB_FLOOR, 0.0, p)
    terms = np.zeros_like(p)
    nz = p > 0
    terms[nz] = p[nz] * np.log2(p[nz])
    return -terms.sum(axis=1)


def mean_rde(net, image: ImageSample, policy: AugmentPolicy, k: int,
             seed: int) -> RdeScore:
    """Mean entropy over k augmentation draws, eval-mode forward.

    Draw j uses the seed derived from (seed, sample_id, j), so pool scans
    give identical results whether run sequentially or in parallel.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    batch = np.stack([
        augment(image, policy, rng_for(seed, image.id, j)).pixels
        for j in range(k)
    ])
    probs = net.forward(batch, train=False)
    return RdeScore(image.id, float(rde_rows(probs).mean()), k)


def score_pool(net, images: list[ImageSample], policy: AugmentPolicy, k: int,
               seed: int, batch_size: int = 256) -> list[RdeScore]:
    """Score many samples at once, batching the k augmentations per image
    through the network. Identical results to calling mean_rde per image."""
    scores: list[RdeScore] = []
    for start in range(0, len(images), max(batch_size // k, 1)):
        chunk = images[start:start + max(batch_size // k, 1)]
        batch = np.stack([
            augment(img, policy, rng_for(seed, img.id, j)).pixels
            for img in chunk for j in range(k)
        ])
        ent = rde_rows(net.forward(batch, train=False)).reshape(len(chunk), k)
        scores.extend(
            RdeScore(img.id, float(e.mean()), k) for img, e in zip(chunk, ent))
    return scores


def select_top_n(scores: list[RdeScore], n: int) -> list[int]:
    """Ids of the n highest-entropy samples; ties broken by ascending id."""
    if n > len(scores):
        raise SelectionError(n, len(scores))
    ordered = sorted(scores, key=lambda s: (-s.mean_rde_bits, s.sample_id))
    return [s.sample_id for s in ordered[:n]]


def dump_scores(scores: list[RdeScore], path) -> None:
    """Write (sample_id, mean_rde_bits, k) sorted by descending entropy."""
    ordered = sorted(scores, key=lambda s: (-s.mean_rde_bits, s.sample_id))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "mean_rde_bits", "k"])
        for s in ordered:
            w.writerow([s.sample_id, f"{s.mean_rde_bits:.9f}", s.k])


def load_scores(path) -> list[RdeScore]:
    with open(path, newline="") as f:
        return [RdeScore(int(r["sample_id"]), float(r["mean_rde_bits"]), int(r["k"]))
                for r in csv.DictReader(f)]
