"""Dataset loading (MNIST IDX, CIFAR-10 binary), pool partitioning, class
distributions, and run-state persistence.

A Dataset concatenates its train and test splits into one id space:
ids [0, train_count) are the train split, the rest the designated test
split. Pools partition that id space into disjoint labeled / unlabeled /
validation / test sets.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .augment import ImageSample
from .seeds import rng_for

RUN_STATE_FORMAT = "guidedlabel-run-v1"

MNIST_CLASSES = [str(d) for d in range(10)]
CIFAR10_CLASSES = ["airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck"]

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801
_CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixel bytes


class DatasetError(Exception):
    pass


class BadMagicError(DatasetError):
    """File does not start with the expected IDX magic number."""


class TruncatedFileError(DatasetError):
    """File is shorter than its header claims."""


class CountMismatchError(DatasetError):
    """Image and label files disagree on the number of items."""


class FileLengthError(DatasetError):
    """CIFAR batch length is not a multiple of the record size."""


class LabelRangeError(DatasetError):
    """A stored label is outside [0, num_classes)."""


class PoolError(DatasetError):
    """Requested pool sizes exceed availability or are degenerate."""


class StateVersionError(DatasetError):
    """Run-state file carries an unknown format tag."""


class StateCorruptError(DatasetError):
    """Run-state file cannot be parsed."""


# ---------------------------------------------------------------------------
# Datasets

@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64; ground truth, hidden for "unlabeled" ids
    class_names: list[str]
    train_count: int

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.images)

    def sample(self, i: int) -> ImageSample:
        return ImageSample(self.images[i], int(i))

    def samples(self, ids) -> list[ImageSample]:
        return [self.sample(i) for i in ids]


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        rest = f.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx_images(raw: bytes, path) -> np.ndarray:
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: IDX image header needs 16 bytes, have {len(raw)}")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != _IDX_IMAGES_MAGIC:
        raise BadMagicError(f"{path}: magic 0x{magic:08x} != 0x{_IDX_IMAGES_MAGIC:08x}")
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: need {need} bytes for {count} images, have {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows, cols, 1).astype(np.float32) / 255.0


def _parse_idx_labels(raw: bytes, path) -> np.ndarray:
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: IDX label header needs 8 bytes, have {len(raw)}")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != _IDX_LABELS_MAGIC:
        raise BadMagicError(f"{path}: magic 0x{magic:08x} != 0x{_IDX_LABELS_MAGIC:08x}")
    if len(raw) < 8 + count:
        raise TruncatedFileError(f"{path}: need {8 + count} bytes for {count} labels, have {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_mnist(images_path, labels_path, test_images_path=None,
               test_labels_path=None) -> Dataset:
    """Load MNIST-format IDX files (optionally gzipped).

    Without test paths the dataset has an empty test split.
    """
    images = _parse_idx_images(_read_bytes(images_path), images_path)
    labels = _parse_idx_labels(_read_bytes(labels_path), labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(
            f"{images_path} has {len(images)} images but {labels_path} has {len(labels)} labels")
    train_count = len(images)
    if test_images_path is not None:
        ti = _parse_idx_images(_read_bytes(test_images_path), test_images_path)
        tl = _parse_idx_labels(_read_bytes(test_labels_path), test_labels_path)
        if len(ti) != len(tl):
            raise CountMismatchError(
                f"{test_images_path} has {len(ti)} images but {test_labels_path} has {len(tl)} labels")
        images = np.concatenate([images, ti])
        labels = np.concatenate([labels, tl])
    return Dataset(images, labels, list(MNIST_CLASSES), train_count)


def write_idx_images(images: np.ndarray, path) -> None:
    """Encode (N, H, W, 1) float [0,1] images as an IDX image file."""
    n, h, w = images.shape[:3]
    raw = (np.clip(images, 0, 1) * 255).round().astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, h, w))
        f.write(raw.tobytes())


def write_idx_labels(labels: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", _IDX_LABELS_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def _parse_cifar_batch(raw: bytes, path) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) == 0 or len(raw) % _CIFAR_RECORD != 0:
        raise FileLengthError(
            f"{path}: length {len(raw)} is not a positive multiple of {_CIFAR_RECORD}")
    n = len(raw) // _CIFAR_RECORD
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(n, _CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max(initial=0) >= 10:
        bad = int(labels.max())
        raise LabelRangeError(f"{path}: label byte {bad} outside [0, 10)")
    # channel-planar R,G,B -> HWC
    pixels = rec[:, 1:].reshape(n, 3, 32, 32).transpose(0, 2, 3, 1)
    return pixels.astype(np.float32) / 255.0, labels


def load_cifar10(batch_paths, test_batch_paths=()) -> Dataset:
    """Load CIFAR-10 binary batches (3073-byte records, channel-planar RGB)."""
    imgs, labs = [], []
    for p in batch_paths:
        i, l = _parse_cifar_batch(_read_bytes(p), p)
        imgs.append(i)
        labs.append(l)
    train_count = sum(len(i) for i in imgs)
    for p in test_batch_paths:
        i, l = _parse_cifar_batch(_read_bytes(p), p)
        imgs.append(i)
        labs.append(l)
    return Dataset(np.concatenate(imgs), np.concatenate(labs),
                   list(CIFAR10_CLASSES), train_count)


def write_cifar10_batch(images: np.ndarray, labels: np.ndarray, path) -> None:
    """Encode (N, 32, 32, 3) float [0,1] images as a CIFAR-10 binary batch."""
    n = len(images)
    raw = np.empty((n, _CIFAR_RECORD), dtype=np.uint8)
    raw[:, 0] = np.asarray(labels, dtype=np.uint8)
    planar = (np.clip(images, 0, 1) * 255).round().astype(np.uint8).transpose(0, 3, 1, 2)
    raw[:, 1:] = planar.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(raw.tobytes())


# ---------------------------------------------------------------------------
# Pools

@dataclass
class Pool:
    labeled_ids: set[int]
    unlabeled_ids: set[int]
    validation_ids: set[int]
    test_ids: set[int]

    def check(self, total: int) -> None:
        sets = [self.labeled_ids, self.unlabeled_ids, self.validation_ids, self.test_ids]
        n = sum(len(s) for s in sets)
        union = set().union(*sets)
        if n != len(union) or union != set(range(total)):
            raise PoolError("pool sets must be disjoint and cover the full id range")

    def move_to_labeled(self, ids) -> None:
        ids = set(int(i) for i in ids)
        if not ids <= self.unlabeled_ids:
            raise PoolError("can only label ids currently in the unlabeled pool")
        self.unlabeled_ids -= ids
        self.labeled_ids |= ids


def make_pools(ds: Dataset, initial_labeled: int, validation: int,
               seed: int, pool_limit: int | None = None) -> Pool:
    """Randomly partition the train split; the designated test split becomes
    test_ids.

    The initial labeled set is sampled uniformly (no class stratification).
    ``pool_limit`` optionally caps the unlabeled pool; surplus train ids are
    folded into test_ids so the partition invariant still holds.
    """
    if initial_labeled < 1:
        raise PoolError("initial_labeled must be >= 1 (a run needs a seed set)")
    if initial_labeled + validation > ds.train_count:
        raise PoolError(
            f"initial_labeled + validation = {initial_labeled + validation} "
            f"exceeds train split size {ds.train_count}")
    rng = rng_for(seed, "pools")
    order = rng.permutation(ds.train_count)
    labeled = order[:initial_labeled]
    val = order[initial_labeled:initial_labeled + validation]
    rest = order[initial_labeled + validation:]
    if pool_limit is not None and len(rest) > pool_limit:
        extra = rest[pool_limit:]
        rest = rest[:pool_limit]
    else:
        extra = np.array([], dtype=np.int64)
    test = set(range(ds.train_count, len(ds))) | set(int(i) for i in extra)
    pool = Pool(set(int(i) for i in labeled), set(int(i) for i in rest),
                set(int(i) for i in val), test)
    pool.check(len(ds))
    return pool


@dataclass
class ClassDistribution:
    counts: list[int]
    total: int


def class_distribution(ids, ds: Dataset) -> ClassDistribution:
    ids = list(ids)
    counts = [0] * ds.num_classes
    for i in ids:
        counts[int(ds.labels[i])] += 1
    return ClassDistribution(counts, len(ids))


# ---------------------------------------------------------------------------
# Run state

@dataclass
class IterationRecord:
    iteration: int
    trained_size: int  # labeled-set size the iteration's network trained on
    labeled_size: int  # labeled-set size after the iteration's selection
    validation_accuracy: float
    test_accuracy: float
    class_counts: list[int]
    selected_ids: list[int]
    epochs_run: int


@dataclass
class RunState:
    mode: str  # "guided" | "random"
    root_seed: int
    iteration: int
    pool: Pool
    labels: dict[int, int]  # oracle-provided labels for labeled ids
    history: list[IterationRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": RUN_STATE_FORMAT,
            "mode": self.mode,
            "root_seed": self.root_seed,
            "iteration": self.iteration,
            "pool": {
                "labeled_ids": sorted(self.pool.labeled_ids),
                "unlabeled_ids": sorted(self.pool.unlabeled_ids),
                "validation_ids": sorted(self.pool.validation_ids),
                "test_ids": sorted(self.pool.test_ids),
            },
            "labels": {str(k): int(v) for k, v in sorted(self.labels.items())},
            "history": [asdict(r) for r in self.history],
        }


def save_run_state(state: RunState, path) -> None:
    """Write a versioned, human-inspectable JSON run state."""
    with open(path, "w") as f:
        json.dump(state.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")


def load_run_state(path) -> RunState:
    try:
        with open(path) as f:
            d = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise StateCorruptError(f"{path}: {e}") from e
    if d.get("format") != RUN_STATE_FORMAT:
        raise StateVersionError(
            f"{path}: format {d.get('format')!r} != {RUN_STATE_FORMAT!r}")
    try:
        pool = Pool(set(d["pool"]["labeled_ids"]), set(d["pool"]["unlabeled_ids"]),
                    set(d["pool"]["validation_ids"]), set(d["pool"]["test_ids"]))
        history = [IterationRecord(**r) for r in d["history"]]
        return RunState(d["mode"], d["root_seed"], d["iteration"], pool,
                        {int(k): int(v) for k, v in d["labels"].items()}, history)
    except (KeyError, TypeError) as e:
        raise StateCorruptError(f"{path}: missing or malformed field: {e}") from e
