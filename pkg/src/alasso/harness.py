"""Continual-training orchestration, evaluation matrix, and metrics.

One experiment is one single-threaded training loop over an ordered task
stream. After every task the model is evaluated on all tasks seen so far,
filling one row of a lower-triangular accuracy matrix from which the
average-accuracy, forgetting and intransigence measures are computed.
Everything is deterministic under the config seeds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn, tasks
from .config import PERMUTED, SPLIT, ExperimentConfig
from .consolidation import (ConsolidationState, RegularizerKind,
                            accumulate_importance, consolidate,
                            total_loss_and_grad)

__all__ = [
    "NumericalError",
    "AccuracyMatrix",
    "MetricsReport",
    "RunResult",
    "evaluate",
    "compute_metrics",
    "run_continual",
    "run_single_task_baseline",
    "run_multi_task_baseline",
    "probe_loss_asymmetry",
]


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


class AccuracyMatrix:
    """Lower-triangular record a[i][j]: test accuracy on task j measured
    right after finishing training task i (both 1-based, j <= i). Entries
    are write-once."""

    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise ValueError(f"n_tasks must be positive, got {n_tasks}")
        self.n_tasks = n_tasks
        self._cells: dict[tuple[int, int], float] = {}

    def set(self, after_task: int, task_id: int, accuracy: float) -> None:
        if not (1 <= task_id <= after_task <= self.n_tasks):
            raise IndexError(f"cell ({after_task}, {task_id}) outside the lower triangle")
        if (after_task, task_id) in self._cells:
            raise ValueError(f"cell ({after_task}, {task_id}) already written")
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError(f"accuracy {accuracy} outside [0, 1]")
        self._cells[(after_task, task_id)] = float(accuracy)

    def get(self, after_task: int, task_id: int) -> float:
        return self._cells[(after_task, task_id)]

    def row(self, after_task: int) -> tuple[float, ...]:
        return tuple(self._cells[(after_task, j)] for j in range(1, after_task + 1))

    @property
    def filled_rows(self) -> int:
        rows = 0
        while rows < self.n_tasks and all((rows + 1, j) in self._cells for j in range(1, rows + 2)):
            rows += 1
        return rows

    def __eq__(self, other):
        return (isinstance(other, AccuracyMatrix) and other.n_tasks == self.n_tasks
                and other._cells == self._cells)


@dataclass
class MetricsReport:
    """Per-k measures computed from an accuracy matrix: avg_accuracy[k-1]
    is the mean of row k, forgetting[k-2] the mean over earlier tasks of
    (best accuracy ever seen on the task before row k) - (row-k accuracy),
    row_std[k-1] the population std of row k. Intransigence compares the
    matrix diagonal against externally supplied per-task reference
    accuracies when those are given."""

    n_tasks: int
    avg_accuracy: tuple[float, ...]
    forgetting: tuple[float, ...]
    row_std: tuple[float, ...]
    final_accuracy: tuple[float, ...]
    intransigence: tuple[float, ...] | None = None
    wall_clock: float = 0.0
    config: ExperimentConfig | None = None


def compute_metrics(matrix: AccuracyMatrix, singletask_acc=None,
                    config: ExperimentConfig | None = None,
                    wall_clock: float = 0.0) -> MetricsReport:
    """Reduce a filled accuracy matrix to the A/F/I measures.

    A_k is the mean of row k. F_k (k >= 2) averages, over tasks j < k, the
    drop from the best accuracy task j ever had in rows j..k-1 to its
    row-k accuracy. I_k averages reference[j] - a[j][j] over j <= k when
    per-task reference accuracies are supplied (upper-bound models).
    These are the standard continual-learning measures, reconstructed
    here; the report flags them as such.
    """
    n = matrix.filled_rows
    if n < matrix.n_tasks:
        raise ValueError(f"matrix incomplete: {n} of {matrix.n_tasks} rows filled")
    rows = [matrix.row(k) for k in range(1, n + 1)]

    avg = tuple(float(np.mean(r)) for r in rows)
    std = tuple(float(np.std(r)) for r in rows)
    forgetting = []
    for k in range(2, n + 1):
        drops = []
        for j in range(1, k):
            best = max(matrix.get(l, j) for l in range(j, k))
            drops.append(best - matrix.get(k, j))
        forgetting.append(float(np.mean(drops)))

    intransigence = None
    if singletask_acc is not None:
        ref = tuple(float(v) for v in singletask_acc)
        if len(ref) < n:
            raise ValueError(f"need {n} reference accuracies, got {len(ref)}")
        intransigence = tuple(
            float(np.mean([ref[j - 1] - matrix.get(j, j) for j in range(1, k + 1)]))
            for k in range(1, n + 1))

    return MetricsReport(
        n_tasks=n,
        avg_accuracy=avg,
        forgetting=tuple(forgetting),
        row_std=std,
        final_accuracy=rows[-1],
        intransigence=intransigence,
        wall_clock=wall_clock,
        config=config,
    )


@dataclass
class RunResult:
    matrix: AccuracyMatrix
    metrics: MetricsReport
    state: ConsolidationState
    params: np.ndarray
    spec: nn.NetworkSpec
    stream: tasks.TaskStream
    config: ExperimentConfig
    wall_clock: float
    epoch_curve: list[tuple[int, int, int, float]] = field(default_factory=list)


def _epoch_seed(shuffle_seed: int, task_id: int, epoch: int) -> int:
    return int(np.random.SeedSequence((shuffle_seed, task_id, epoch)).generate_state(1)[0])


def load_experiment_data(config: ExperimentConfig) -> tuple[tasks.Dataset, tasks.Dataset]:
    if config.dataset_dir is None:
        raise FileNotFoundError("no dataset directory configured")
    return tasks.load_mnist_dir(config.dataset_dir)


def _build_stream(config: ExperimentConfig, data) -> tasks.TaskStream:
    train, test = data if data is not None else load_experiment_data(config)
    if config.train_subset is not None:
        train = train.take(config.train_subset)
    if config.schedule == PERMUTED:
        return tasks.make_permuted_tasks(train, test, config.n_tasks, config.task_seed)
    return tasks.make_split_tasks(train, test, config.classes_per_task, config.task_seed)


def _network_spec(config: ExperimentConfig, stream: tasks.TaskStream) -> nn.NetworkSpec:
    base = stream[0]._base_train
    return nn.NetworkSpec((base.images.shape[1], *config.hidden, base.class_count))


def evaluate(spec: nn.NetworkSpec, params: np.ndarray, task: tasks.Task,
             batch_size: int = 512) -> float:
    """Mean argmax accuracy over the task's test set. Classes outside the
    task's head mask are excluded before the argmax; exact logit ties
    resolve to the lowest class index."""
    test = task.test
    n = len(test)
    if n == 0:
        raise ValueError(f"task {task.id} has no test examples")
    hits = 0
    for start in range(0, n, batch_size):
        logits = nn.forward(spec, params, test.images[start:start + batch_size])
        if task.head_mask is not None:
            keep = np.zeros(logits.shape[1], dtype=bool)
            keep[task.head_mask] = True
            logits = np.where(keep, logits, -np.inf)
        hits += int((logits.argmax(axis=1) == test.labels[start:start + batch_size]).sum())
    return hits / n


def _train_one_task(spec, params, adam, state, kind, task, config, on_step=None):
    for epoch in range(config.epochs_per_task):
        seed = _epoch_seed(config.shuffle_seed, task.id, epoch)
        for batch_index, (xb, yb) in enumerate(tasks.batches(task, config.batch_size, seed)):
            total, grad, _task_l, task_g = total_loss_and_grad(
                spec, params, xb, yb, state, kind, task.head_mask)
            if not np.isfinite(total):
                raise NumericalError(
                    f"non-finite loss at task {task.id}, epoch {epoch}, batch {batch_index}")
            params, delta = nn.adam_step(params, grad, adam)
            accumulate_importance(state, task_g, delta)
        if on_step is not None:
            on_step(epoch, params)
    return params


def run_continual(config: ExperimentConfig, data=None) -> RunResult:
    """Train the configured model over the task stream in order, penalizing
    movement per the configured regularizer, consolidating at every task
    boundary, and evaluating on all tasks seen so far after each task."""
    t0 = time.perf_counter()
    stream = _build_stream(config, data)
    spec = _network_spec(config, stream)
    params = nn.init_params(spec, config.init_seed)
    state = ConsolidationState.fresh(params, config.hyper)
    kind = config.regularizer
    matrix = AccuracyMatrix(len(stream))
    epoch_curve: list[tuple[int, int, int, float]] = []

    for task in stream:
        adam = nn.AdamState.fresh(spec.param_count, lr=config.lr,
                                  beta1=config.beta1, beta2=config.beta2)
        on_step = None
        if config.eval_every_epoch:
            def on_step(epoch, p, _task=task):
                for seen in stream[:_task.id]:
                    epoch_curve.append((_task.id, epoch, seen.id, evaluate(spec, p, seen)))
        params = _train_one_task(spec, params, adam, state, kind, task, config, on_step)
        if kind is not RegularizerKind.NONE:
            state = consolidate(state, params, kind)
        for seen in stream[:task.id]:
            matrix.set(task.id, seen.id, evaluate(spec, params, seen))

    wall = time.perf_counter() - t0
    metrics = compute_metrics(matrix, config=config, wall_clock=wall)
    return RunResult(matrix, metrics, state, params, spec, stream, config, wall, epoch_curve)


def run_single_task_baseline(config: ExperimentConfig, data=None) -> tuple[float, ...]:
    """Upper-bound reference: one independently initialized model per task,
    trained on that task alone and evaluated on it. Uses the same seeds as
    the continual run, so task 1 coincides with an unregularized run."""
    stream = _build_stream(config, data)
    spec = _network_spec(config, stream)
    accs = []
    for task in stream:
        params = nn.init_params(spec, config.init_seed)
        adam = nn.AdamState.fresh(spec.param_count, lr=config.lr,
                                  beta1=config.beta1, beta2=config.beta2)
        state = ConsolidationState.fresh(params, config.hyper)
        params = _train_one_task(spec, params, adam, state, RegularizerKind.NONE, task, config)
        accs.append(evaluate(spec, params, task))
    return tuple(accs)


def run_multi_task_baseline(config: ExperimentConfig, data=None) -> tuple[AccuracyMatrix, MetricsReport]:
    """Upper-bound reference: for every prefix 1..k of the stream, retrain a
    fresh model on mini-batches mixed across all k tasks, then evaluate on
    each of them. Permutation schedules only (a mixed batch has a single
    head mask)."""
    stream = _build_stream(config, data)
    if stream.kind != tasks.PERMUTATION:
        raise NotImplementedError("mixed-batch baseline supports permutation streams only")
    spec = _network_spec(config, stream)
    matrix = AccuracyMatrix(len(stream))
    base = stream[0]._base_train
    n_rows = len(base)

    for k in range(1, len(stream) + 1):
        params = nn.init_params(spec, config.init_seed)
        adam = nn.AdamState.fresh(spec.param_count, lr=config.lr,
                                  beta1=config.beta1, beta2=config.beta2)
        for epoch in range(config.epochs_per_task):
            rng = np.random.default_rng(_epoch_seed(config.shuffle_seed, 10_000 + k, epoch))
            order = rng.permutation(k * n_rows)  # virtual index: task * n_rows + row
            for start in range(0, order.size, config.batch_size):
                virt = order[start:start + config.batch_size]
                task_ids, rows = virt // n_rows, virt % n_rows
                xb = base.images[rows].copy()
                for t in np.unique(task_ids):
                    sel = task_ids == t
                    xb[sel] = xb[sel][:, stream[t].permutation]
                loss, grad = nn.task_loss_and_grad(spec, params, xb, base.labels[rows])
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss in mixed run, prefix {k}, epoch {epoch}")
                params, _ = nn.adam_step(params, grad, adam)
        for seen in stream[:k]:
            matrix.set(k, seen.id, evaluate(spec, params, seen))
    return matrix, compute_metrics(matrix, config=config)


def probe_loss_asymmetry(spec: nn.NetworkSpec, params: np.ndarray, task: tasks.Task,
                         k_indices, offsets, sample_size: int = 1024) -> list[tuple[int, float, float]]:
    """Per-parameter loss landscape probe: for each selected flat index k
    and offset, the change of the task loss on a fixed evaluation batch
    when only parameter k is displaced by the offset. Rows come back as
    (k, offset, delta_loss), ready for plotting."""
    train = task.train
    x = train.images[:sample_size]
    y = train.labels[:sample_size]
    base = nn.task_loss(spec, params, x, y, task.head_mask)
    probe = params.copy()
    rows = []
    for k in k_indices:
        k = int(k)
        if not 0 <= k < params.size:
            raise IndexError(f"parameter index {k} outside vector of length {params.size}")
        original = probe[k]
        for off in offsets:
            probe[k] = original + off
            rows.append((k, float(off), nn.task_loss(spec, probe, x, y, task.head_mask) - base))
        probe[k] = original
    return rows
