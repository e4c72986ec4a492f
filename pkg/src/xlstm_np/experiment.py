"""Config-driven training and evaluation with CSV metrics."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blocks import ModelParams, init_model, model_backward, model_forward, save_checkpoint
from .config import RunConfig
from .numerics import NumericOverflowError
from .tasks import RANDOM_BASELINE, TaskConfig, gen_batch, scaled_accuracy
from .training import (ScheduleConfig, adamw_step, init_optimizer, lr_at, masked_accuracy,
                       masked_cross_entropy, mse_loss)

# parity answers are a or b, so predictions are read from those two logits only
ANSWER_CLASSES = {"parity": 2}
METRIC_FIELDS = ("step", "lr", "train_loss", "eval_loss", "eval_accuracy", "eval_scaled_accuracy", "eval_mse")


@dataclass
class MetricsRecord:
    step: int
    lr: float
    train_loss: float
    eval_loss: float
    eval_accuracy: float | None = None
    eval_scaled_accuracy: float | None = None
    eval_mse: float | None = None

    def row(self) -> list[str]:
        return ["" if v is None else (str(v) if isinstance(v, int) else repr(float(v)))
                for v in (getattr(self, f) for f in METRIC_FIELDS)]


def rng_streams(seed: int):
    """Independent generators for init, training data and held-out data."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(3)]


def loss_and_grad(task: TaskConfig, out, targets, mask):
    if task.kind == "nns":
        return mse_loss(out[..., 0], targets, mask)
    return masked_cross_entropy(out, targets, mask)


def held_out_set(task: TaskConfig, rng: np.random.Generator, n: int):
    return gen_batch(task, rng, n)


def evaluate(model: ModelParams, task: TaskConfig, data, batch_size: int = 128) -> dict:
    """Loss and task metric over a fixed held-out set."""
    inputs, targets, mask = data
    n = inputs.shape[0]
    losses, hits, counted = [], 0, 0
    for s in range(0, n, batch_size):
        sl = slice(s, s + batch_size)
        out, _ = model_forward(model, inputs[sl])
        loss, _ = loss_and_grad(task, out, targets[sl], mask[sl])
        losses.append(loss * out.shape[0])
        if task.kind != "nns":
            h, c = masked_accuracy(out, targets[sl], mask[sl], ANSWER_CLASSES.get(task.kind))
            hits, counted = hits + h, counted + c
    result = {"eval_loss": float(np.sum(losses) / n)}
    if task.kind == "nns":
        result["eval_mse"] = result["eval_loss"]
    else:
        acc = hits / counted
        result["eval_accuracy"] = acc
        s_rand = RANDOM_BASELINE.get(task.kind, 0.0)
        result["eval_scaled_accuracy"] = scaled_accuracy(acc, s_rand)
    return result


def _reached(task: TaskConfig, metrics: dict, target: float | None) -> bool:
    if target is None:
        return False
    if task.kind == "nns":
        return metrics["eval_mse"] <= target
    key = "eval_scaled_accuracy" if task.kind in RANDOM_BASELINE else "eval_accuracy"
    return metrics[key] >= target


def config_header(cfg: RunConfig) -> str:
    """Config echo as '#'-prefixed JSON lines so a metrics file is self-describing."""
    text = json.dumps(cfg.to_dict(), sort_keys=True, indent=1)
    return "".join(f"# {line}\n" for line in text.splitlines())


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(rows))))


@dataclass
class TrainResult:
    model: ModelParams
    history: list[MetricsRecord]
    final: dict
    steps_run: int


def train(cfg: RunConfig, out_dir=None, log=None) -> TrainResult:
    """Train from scratch. With ``out_dir``, writes metrics.csv, timing.csv and model.ckpt.

    Wall-clock times go to timing.csv so that metrics.csv depends only on the
    config and seed.
    """
    tc = cfg.train
    init_rng, data_rng, eval_rng = rng_streams(tc.seed)
    model = init_model(cfg.model, init_rng)
    params = model.arrays()
    opt = init_optimizer(params, weight_decay=tc.weight_decay)
    sched = ScheduleConfig(peak_lr=tc.peak_lr, total_steps=tc.steps, warmup_steps=tc.warmup_steps)
    eval_data = held_out_set(cfg.held_out, eval_rng, tc.eval_samples)

    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = timing_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.csv", "w", newline="")
        metrics_fh.write(config_header(cfg))
        metrics_writer = csv.writer(metrics_fh, lineterminator="\n")
        metrics_writer.writerow(METRIC_FIELDS)
        timing_fh = open(out / "timing.csv", "w")
        timing_fh.write("step,wall_seconds\n")
    history: list[MetricsRecord] = []
    start = time.perf_counter()
    running, n_running = 0.0, 0
    step = 0
    final: dict = {}
    try:
        for step in range(1, tc.steps + 1):
            inputs, targets, mask = gen_batch(cfg.task, data_rng, tc.batch_size)
            outputs, caches = model_forward(model, inputs)
            loss, dout = loss_and_grad(cfg.task, outputs, targets, mask)
            if not np.isfinite(loss):
                raise NumericOverflowError(f"non-finite training loss at step {step}")
            if cfg.task.kind == "nns":
                dout = dout[..., None]
            grads = model_backward(model, caches, dout).arrays()
            lr = lr_at(sched, step)
            adamw_step(params, grads, opt, lr)
            running += loss
            n_running += 1
            if step % tc.eval_interval == 0 or step == tc.steps:
                final = evaluate(model, cfg.held_out, eval_data, tc.eval_batch_size)
                rec = MetricsRecord(step=step, lr=lr, train_loss=running / n_running, **final)
                history.append(rec)
                running, n_running = 0.0, 0
                if metrics_fh is not None:
                    metrics_writer.writerow(rec.row())
                    metrics_fh.flush()
                    timing_fh.write(f"{step},{time.perf_counter() - start:.3f}\n")
                    timing_fh.flush()
                if log is not None:
                    log(rec)
                if _reached(cfg.held_out, final, tc.target_metric):
                    break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()
    if out is not None:
        save_checkpoint(out / "model.ckpt", model, {"steps": step, "seed": tc.seed})
    return TrainResult(model=model, history=history, final=final, steps_run=step)
