import numpy as np
import pytest

from guidedlabel.augment import AugmentPolicy
from guidedlabel.data import Dataset
from guidedlabel.seeds import rng_for


def make_toy_dataset(n=400, train_count=300, seed=42) -> Dataset:
    """10-class 8x8 dataset: class = position of a bright 2x2 block, plus noise."""
    rng = rng_for(seed)
    imgs = np.zeros((n, 8, 8, 1), dtype=np.float32)
    labels = rng.integers(0, 10, n)
    for i in range(n):
        c = int(labels[i])
        imgs[i, c // 4 * 2:c // 4 * 2 + 2, (c % 4) * 2:(c % 4) * 2 + 2, 0] = 1.0
        imgs[i] += rng.normal(0, 0.08, (8, 8, 1)).astype(np.float32)
    return Dataset(np.clip(imgs, 0, 1), labels.astype(np.int64),
                   [str(i) for i in range(10)], train_count=train_count)


@pytest.fixture(scope="session")
def toy_ds() -> Dataset:
    return make_toy_dataset()


@pytest.fixture
def toy_policy() -> AugmentPolicy:
    return AugmentPolicy(rotation_range_deg=5, scale_range=(0.95, 1.05),
                         target_size=(8, 8))
