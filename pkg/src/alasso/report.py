"""Run artifacts: accuracy-matrix CSV, flat key-value report, plot data.

All files are UTF-8 with LF line endings, '.' decimal separator and 10
significant digits, so identical runs produce byte-identical artifacts.
The report is a flat ``key = value`` document with a format-version key;
the config section round-trips field-for-field.
"""

from __future__ import annotations

import os

from .config import ExperimentConfig, config_from_kv, config_to_kv
from .harness import AccuracyMatrix, MetricsReport, RunResult
from .tasks import PERMUTATION

__all__ = [
    "FORMAT_VERSION",
    "write_matrix_csv",
    "matrix_from_csv",
    "write_avg_csv",
    "write_probe_csv",
    "write_sweep_csv",
    "emit_report",
    "parse_report",
    "config_from_report",
]

FORMAT_VERSION = "1"


def fmt(x: float) -> str:
    return f"{x:.10g}"


def _open_lf(path):
    return open(path, "w", encoding="utf-8", newline="\n")


def write_matrix_csv(matrix: AccuracyMatrix, path) -> None:
    with _open_lf(path) as f:
        f.write("after_task,task_id,accuracy\n")
        for i in range(1, matrix.filled_rows + 1):
            for j in range(1, i + 1):
                f.write(f"{i},{j},{fmt(matrix.get(i, j))}\n")


def matrix_from_csv(path) -> AccuracyMatrix:
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "after_task,task_id,accuracy":
            raise ValueError(f"{path}: unexpected header {header!r}")
        cells = []
        for line in f:
            if line.strip():
                i, j, a = line.split(",")
                cells.append((int(i), int(j), float(a)))
    if not cells:
        raise ValueError(f"{path}: no data rows")
    matrix = AccuracyMatrix(max(i for i, _, _ in cells))
    for i, j, a in cells:
        matrix.set(i, j, a)
    return matrix


def write_avg_csv(metrics: MetricsReport, path) -> None:
    """Average accuracy and its per-task spread after each task."""
    with _open_lf(path) as f:
        f.write("after_task,avg_accuracy,std_accuracy\n")
        for k in range(1, metrics.n_tasks + 1):
            f.write(f"{k},{fmt(metrics.avg_accuracy[k - 1])},{fmt(metrics.row_std[k - 1])}\n")


def write_probe_csv(rows, path) -> None:
    with _open_lf(path) as f:
        f.write("k,offset,delta_loss\n")
        for k, off, dl in rows:
            f.write(f"{k},{fmt(off)},{fmt(dl)}\n")


def write_sweep_csv(rows, path) -> None:
    with _open_lf(path) as f:
        f.write("a,avg_accuracy\n")
        for a, acc in rows:
            f.write(f"{fmt(a)},{fmt(acc)}\n")


def _metric_lines(metrics: MetricsReport):
    for k in range(1, metrics.n_tasks + 1):
        yield f"metrics.A_{k}", fmt(metrics.avg_accuracy[k - 1])
    for k in range(2, metrics.n_tasks + 1):
        yield f"metrics.F_{k}", fmt(metrics.forgetting[k - 2])
    if metrics.intransigence is not None:
        for k in range(1, metrics.n_tasks + 1):
            yield f"metrics.I_{k}", fmt(metrics.intransigence[k - 1])
    for k in range(1, metrics.n_tasks + 1):
        yield f"metrics.std_{k}", fmt(metrics.row_std[k - 1])
    for j, acc in enumerate(metrics.final_accuracy, start=1):
        yield f"metrics.final_task_{j}", fmt(acc)


def emit_report(result: RunResult, out_dir) -> dict[str, str]:
    """Write the run's artifacts into out_dir and return their paths:
    accuracy_matrix.csv, avg_accuracy.csv, report.txt (config echo,
    per-k metrics, seeds, task permutations) and, when per-epoch
    evaluation was on, epoch_accuracy.csv."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "matrix": os.path.join(out_dir, "accuracy_matrix.csv"),
        "avg": os.path.join(out_dir, "avg_accuracy.csv"),
        "report": os.path.join(out_dir, "report.txt"),
    }
    write_matrix_csv(result.matrix, paths["matrix"])
    write_avg_csv(result.metrics, paths["avg"])

    with _open_lf(paths["report"]) as f:
        f.write(f"format_version = {FORMAT_VERSION}\n")
        for key, value in config_to_kv(result.config).items():
            f.write(f"config.{key} = {value}\n")
        for key, value in _metric_lines(result.metrics):
            f.write(f"{key} = {value}\n")
        # the F/I measures are standard reconstructions, not tool-specific
        f.write("metrics.note = forgetting/intransigence follow the standard "
                "continual-learning definitions (reconstructed)\n")
        f.write(f"wall_clock_seconds = {fmt(result.wall_clock)}\n")
        if result.stream.kind == PERMUTATION:
            for task in result.stream:
                perm = ",".join(str(p) for p in task.permutation)
                f.write(f"task_{task.id}.permutation = {perm}\n")
        else:
            for task in result.stream:
                f.write(f"task_{task.id}.classes = {','.join(str(c) for c in task.classes)}\n")

    if result.epoch_curve:
        paths["epochs"] = os.path.join(out_dir, "epoch_accuracy.csv")
        with _open_lf(paths["epochs"]) as f:
            f.write("training_task,epoch,task_id,accuracy\n")
            for task_id, epoch, seen, acc in result.epoch_curve:
                f.write(f"{task_id},{epoch},{seen},{fmt(acc)}\n")
    return paths


def parse_report(path) -> dict[str, str]:
    kv = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            key, sep, value = line.partition(" = ")
            if not sep:
                raise ValueError(f"{path}: malformed line {line!r}")
            kv[key] = value
    if kv.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {kv.get('format_version')!r}")
    return kv


def config_from_report(path) -> ExperimentConfig:
    kv = parse_report(path)
    prefix = "config."
    return config_from_kv({k[len(prefix):]: v for k, v in kv.items() if k.startswith(prefix)})
