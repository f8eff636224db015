"""Dataset ingestion and continual-task construction.

Reads and writes the big-endian IDX byte format that MNIST is distributed
in (paths ending in .gz are gunzipped transparently) and builds two kinds
of task sequences over a base dataset: pixel-permutation tasks and
class-subset tasks. Datasets are immutable after load; tasks keep
references to the base arrays and materialize their transformed views on
demand, caching only the test view (it is re-evaluated after every task).
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxCountMismatchError",
    "Dataset",
    "Task",
    "TaskStream",
    "load_idx",
    "load_mnist_dir",
    "write_idx_images",
    "write_idx_labels",
    "make_permuted_tasks",
    "make_split_tasks",
    "batches",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(Exception):
    """Base class for IDX file problems."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class Dataset:
    """Flat image dataset: images (N, D) float64 scaled to [0, 1], integer
    labels below class_count."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __len__(self) -> int:
        return self.images.shape[0]

    def take(self, n: int) -> "Dataset":
        """First n examples (the files are shuffled at generation time, so a
        prefix is an unbiased, deterministic subset)."""
        if n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.class_count)


def _open_maybe_gzip(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_exact(f, n, what, path):
    data = f.read(n)
    if len(data) != n:
        raise IdxTruncatedError(f"{path}: truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Load an images/labels IDX pair into a Dataset (pixels divided by 255)."""
    with _open_maybe_gzip(images_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header", images_path))
        if magic != IMAGES_MAGIC:
            raise IdxMagicError(
                f"{images_path}: magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x} for an images file")
        pixels = np.frombuffer(_read_exact(f, n * rows * cols, "pixel data", images_path), dtype=np.uint8)
    with _open_maybe_gzip(labels_path, "rb") as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, "label header", labels_path))
        if magic != LABELS_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x} for a labels file")
        labels = np.frombuffer(_read_exact(f, n_labels, "label data", labels_path), dtype=np.uint8)
    if n_labels != n:
        raise IdxCountMismatchError(
            f"{images_path} has {n} images but {labels_path} has {n_labels} labels")
    images = (pixels.reshape(n, rows * cols).astype(np.float64)) / 255.0
    labels = labels.astype(np.int64)
    class_count = int(labels.max()) + 1 if n else 0
    return Dataset(images, labels, class_count)


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist_dir(directory) -> tuple[Dataset, Dataset]:
    """Load the conventional train/t10k file quadruple from a directory."""
    out = []
    for split in ("train", "test"):
        img_stem, lbl_stem = _MNIST_FILES[split]
        out.append(load_idx(_find(directory, img_stem), _find(directory, lbl_stem)))
    return out[0], out[1]


def write_idx_images(path, images: np.ndarray) -> None:
    """Write a uint8 (N, rows, cols) stack as an IDX images file."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"expected (N, rows, cols) uint8 array, got shape {images.shape}")
    n, rows, cols = images.shape
    with _open_maybe_gzip(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ValueError(f"expected a flat label array, got shape {labels.shape}")
    with _open_maybe_gzip(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


PERMUTATION = "permutation"
CLASS_SUBSET = "class_subset"


class Task:
    """One element of a task stream: a transform over the shared base data.

    Permutation tasks reorder pixel columns (labels untouched, no head
    mask); class-subset tasks filter rows to their classes and carry a
    head mask restricting the usable output classes.
    """

    def __init__(self, task_id: int, base_train: Dataset, base_test: Dataset,
                 permutation: np.ndarray | None = None, classes: np.ndarray | None = None):
        if (permutation is None) == (classes is None):
            raise ValueError("task needs exactly one of permutation / classes")
        self.id = task_id
        self.permutation = permutation
        self.classes = classes
        self.kind = PERMUTATION if permutation is not None else CLASS_SUBSET
        self.head_mask = None if classes is None else np.asarray(classes, dtype=np.int64)
        self._base_train = base_train
        self._base_test = base_test
        self._test_cache: Dataset | None = None

    def __repr__(self):
        detail = f"classes={list(self.classes)}" if self.kind == CLASS_SUBSET else "permutation"
        return f"Task(id={self.id}, {detail})"

    def _transform(self, ds: Dataset) -> Dataset:
        if self.permutation is not None:
            return Dataset(ds.images[:, self.permutation], ds.labels, ds.class_count)
        keep = np.isin(ds.labels, self.classes)
        return Dataset(ds.images[keep], ds.labels[keep], ds.class_count)

    @property
    def train(self) -> Dataset:
        return self._transform(self._base_train)

    @property
    def test(self) -> Dataset:
        if self._test_cache is None:
            self._test_cache = self._transform(self._base_test)
        return self._test_cache


@dataclass
class TaskStream:
    """Ordered task sequence; deterministic for a fixed generation seed."""

    tasks: list[Task]
    seed: int
    kind: str

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]


def make_permuted_tasks(train: Dataset, test: Dataset, n_tasks: int, seed: int) -> TaskStream:
    """Pixel-permutation tasks over a base dataset. Task 1 keeps the
    identity permutation so single-task baselines are comparable; tasks
    2..n draw independent uniform permutations from the seed."""
    if n_tasks < 1:
        raise ValueError(f"n_tasks must be at least 1, got {n_tasks}")
    d = train.images.shape[1]
    rng = np.random.default_rng(seed)
    tasks = []
    for i in range(n_tasks):
        perm = np.arange(d) if i == 0 else rng.permutation(d)
        tasks.append(Task(i + 1, train, test, permutation=perm))
    return TaskStream(tasks, seed, PERMUTATION)


def make_split_tasks(train: Dataset, test: Dataset, classes_per_task: int, seed: int,
                     shuffle_classes: bool = False) -> TaskStream:
    """Class-subset tasks partitioning the label set, in label order by
    default (shuffled by the seed on request); the last task takes any
    remainder. Each task's head mask is its class set."""
    if classes_per_task < 1:
        raise ValueError(f"classes_per_task must be at least 1, got {classes_per_task}")
    order = np.arange(train.class_count)
    if shuffle_classes:
        np.random.default_rng(seed).shuffle(order)
    tasks = []
    for i, start in enumerate(range(0, train.class_count, classes_per_task)):
        classes = order[start:start + classes_per_task]
        tasks.append(Task(i + 1, train, test, classes=classes))
    return TaskStream(tasks, seed, CLASS_SUBSET)


def batches(task: Task, batch_size: int, epoch_seed: int):
    """One epoch of training batches: a seeded shuffle of the task's train
    set, chunked; the final short batch is included. Deterministic for a
    fixed (task, epoch_seed)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    train = task.train
    n = len(train)
    if n == 0:
        raise ValueError(f"task {task.id} has no training examples")
    order = np.random.default_rng(epoch_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield train.images[idx], train.labels[idx]
