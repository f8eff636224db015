"""Experiment configuration and its flat key-value text round-trip."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .consolidation import Hyperparams, RegularizerKind

__all__ = ["ExperimentConfig", "config_to_kv", "config_from_kv"]

PERMUTED = "permuted"
SPLIT = "split"


@dataclass
class ExperimentConfig:
    """Everything a run needs; serialized verbatim into the report so a run
    can be reproduced from its artifacts alone."""

    hidden: tuple[int, ...] = (256, 256)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs_per_task: int = 5
    batch_size: int = 256
    regularizer: RegularizerKind = RegularizerKind.NONE
    hyper: Hyperparams = field(default_factory=Hyperparams)
    schedule: str = PERMUTED
    n_tasks: int = 10
    classes_per_task: int = 2
    init_seed: int = 0
    task_seed: int = 0
    shuffle_seed: int = 0
    train_subset: int | None = None
    eval_every_epoch: bool = False
    dataset_dir: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden:
            raise ValueError("need at least one hidden layer width")
        if self.schedule not in (PERMUTED, SPLIT):
            raise ValueError(f"schedule must be '{PERMUTED}' or '{SPLIT}', got {self.schedule!r}")
        for name in ("epochs_per_task", "batch_size", "n_tasks", "classes_per_task"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.train_subset is not None and self.train_subset < 1:
            raise ValueError(f"train_subset must be positive, got {self.train_subset}")

    def with_hyper(self, **kwargs) -> "ExperimentConfig":
        return replace(self, hyper=replace(self.hyper, **kwargs))


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)  # repr round-trips float64 exactly
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, RegularizerKind):
        return value.value
    return str(value)


def config_to_kv(config: ExperimentConfig) -> dict[str, str]:
    """Flatten a config to an ordered {key: string} mapping."""
    kv = {
        "hidden": _fmt(config.hidden),
        "lr": _fmt(config.lr),
        "beta1": _fmt(config.beta1),
        "beta2": _fmt(config.beta2),
        "epochs_per_task": _fmt(config.epochs_per_task),
        "batch_size": _fmt(config.batch_size),
        "regularizer": _fmt(config.regularizer),
        "hyper.a": _fmt(config.hyper.a),
        "hyper.a_prime": _fmt(config.hyper.a_prime),
        "hyper.c": _fmt(config.hyper.c),
        "hyper.c_prime": _fmt(config.hyper.c_prime),
        "hyper.epsilon": _fmt(config.hyper.epsilon),
        "hyper.xi": _fmt(config.hyper.xi),
        "schedule": _fmt(config.schedule),
        "n_tasks": _fmt(config.n_tasks),
        "classes_per_task": _fmt(config.classes_per_task),
        "init_seed": _fmt(config.init_seed),
        "task_seed": _fmt(config.task_seed),
        "shuffle_seed": _fmt(config.shuffle_seed),
        "train_subset": _fmt(config.train_subset),
        "eval_every_epoch": _fmt(config.eval_every_epoch),
        "dataset_dir": _fmt(config.dataset_dir),
        "out_dir": _fmt(config.out_dir),
    }
    return kv


def _opt_int(s: str) -> int | None:
    return None if s == "none" else int(s)


def _opt_str(s: str) -> str | None:
    return None if s == "none" else s


def config_from_kv(kv: dict[str, str]) -> ExperimentConfig:
    """Inverse of config_to_kv: field-for-field exact."""
    return ExperimentConfig(
        hidden=tuple(int(v) for v in kv["hidden"].split(",")),
        lr=float(kv["lr"]),
        beta1=float(kv["beta1"]),
        beta2=float(kv["beta2"]),
        epochs_per_task=int(kv["epochs_per_task"]),
        batch_size=int(kv["batch_size"]),
        regularizer=RegularizerKind.from_string(kv["regularizer"]),
        hyper=Hyperparams(
            a=float(kv["hyper.a"]),
            a_prime=float(kv["hyper.a_prime"]),
            c=float(kv["hyper.c"]),
            c_prime=float(kv["hyper.c_prime"]),
            epsilon=float(kv["hyper.epsilon"]),
            xi=float(kv["hyper.xi"]),
        ),
        schedule=kv["schedule"],
        n_tasks=int(kv["n_tasks"]),
        classes_per_task=int(kv["classes_per_task"]),
        init_seed=int(kv["init_seed"]),
        task_seed=int(kv["task_seed"]),
        shuffle_seed=int(kv["shuffle_seed"]),
        train_subset=_opt_int(kv["train_subset"]),
        eval_every_epoch=kv["eval_every_epoch"] == "true",
        dataset_dir=_opt_str(kv["dataset_dir"]),
        out_dir=_opt_str(kv["out_dir"]),
    )
