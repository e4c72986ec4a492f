"""Run configuration: dataclasses plus a strict TOML loader.

A run file has up to four tables::

    [model]   StackConfig fields
    [task]    TaskConfig fields for training data
    [train]   TrainConfig fields
    [eval]    TaskConfig overrides for the held-out set (e.g. longer lengths)

Unknown tables or keys are rejected with a :class:`ConfigError` naming them.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .blocks import StackConfig
from .tasks import TaskConfig


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` is the dotted offending key when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup_steps: int | None = None
    weight_decay: float = 0.1
    eval_interval: int = 100
    eval_samples: int = 512
    eval_batch_size: int = 128
    seed: int = 0
    # stop once the eval metric reaches this value (accuracy: >=, mse: <=)
    target_metric: float | None = None

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.eval_interval < 1 or self.eval_samples < 1:
            raise ValueError("steps, batch_size, eval_interval and eval_samples must be positive")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")


@dataclass(frozen=True)
class RunConfig:
    model: StackConfig
    task: TaskConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_task: TaskConfig | None = None

    @property
    def held_out(self) -> TaskConfig:
        return self.task if self.eval_task is None else self.eval_task

    def with_seed(self, seed: int) -> RunConfig:
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        out = {"model": _plain(dataclasses.asdict(self.model)), "task": dataclasses.asdict(self.task),
               "train": dataclasses.asdict(self.train)}
        if self.eval_task is not None:
            out["eval"] = dataclasses.asdict(self.eval_task)
        return out


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _build(cls, table: dict, section: str, base=None):
    names = {f.name for f in dataclasses.fields(cls)}
    for key in table:
        if key not in names:
            raise ConfigError(f"unknown key '{section}.{key}'", f"{section}.{key}")
    try:
        if base is not None:
            return dataclasses.replace(base, **table)
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] table: {exc}", section) from exc


def run_config_from_dict(data: dict) -> RunConfig:
    for section in data:
        if section not in ("model", "task", "train", "eval"):
            raise ConfigError(f"unknown table '[{section}]'", section)
    task = _build(TaskConfig, data.get("task", {}), "task")
    model_table = dict(data.get("model", {}))
    # the task fixes the model's input/output interface unless stated explicitly
    if task.kind == "nns":
        model_table.setdefault("input_dim", 3)
        model_table.setdefault("output_dim", 1)
    else:
        model_table.setdefault("vocab_size", task.vocab_size)
    model = _build(StackConfig, model_table, "model")
    train = _build(TrainConfig, data.get("train", {}), "train")
    eval_task = _build(TaskConfig, data["eval"], "eval", base=task) if "eval" in data else None
    if task.kind != "nns" and model.vocab_size < task.vocab_size:
        raise ConfigError("model.vocab_size is smaller than the task vocabulary", "model.vocab_size")
    return RunConfig(model=model, task=task, train=train, eval_task=eval_task)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return run_config_from_dict(data)
