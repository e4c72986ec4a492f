"""AdamW, warmup + cosine schedule, masked losses and a small training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Per-parameter moments keyed by dotted parameter name."""
    m: dict[str, Tensor]
    v: dict[str, Tensor]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-5
    weight_decay: float = 0.1
    no_decay: frozenset = frozenset({"embed"})


def init_optimizer(params: dict[str, Tensor], weight_decay: float = 0.1,
                   no_decay=("embed",), beta1: float = 0.9, beta2: float = 0.95,
                   eps: float = 1e-5) -> OptimizerState:
    """Zero moments for every array in ``params``; ``embed`` is never decayed."""
    excl = frozenset(no_decay) | {"embed"}
    return OptimizerState(
        m={k: np.zeros_like(a) for k, a in params.items()},
        v={k: np.zeros_like(a) for k, a in params.items()},
        beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay, no_decay=excl,
    )


def adamw_step(params: dict[str, Tensor], grads: dict[str, Tensor], state: OptimizerState,
               lr: float) -> OptimizerState:
    """Decoupled weight decay followed by a bias-corrected Adam update, in place."""
    if set(params) != set(state.m):
        raise ValueError("optimizer state does not match parameter names")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {params[k].shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay and k not in state.no_decay:
            p -= lr * state.weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# --------------------------------------------------------------------------
# learning-rate schedule
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleConfig:
    peak_lr: float
    total_steps: int
    warmup_steps: int | None = None
    floor: float = 0.1

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.warmup_steps is not None and not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")

    @property
    def warmup(self) -> int:
        """750 steps, or 10% of the run when the run is shorter than 7500 steps."""
        if self.warmup_steps is not None:
            return self.warmup_steps
        return 750 if self.total_steps >= 7500 else self.total_steps // 10


def lr_at(schedule: ScheduleConfig, step: int) -> float:
    """Linear ramp to the peak, then cosine down to ``floor * peak`` at the last step."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    peak, w, total = schedule.peak_lr, schedule.warmup, schedule.total_steps
    if step < w:
        return peak * step / w
    if total == w:
        return peak
    frac = (step - w) / (total - w)
    lo = schedule.floor
    return peak * (lo + (1.0 - lo) * 0.5 * (1.0 + math.cos(math.pi * frac)))


# --------------------------------------------------------------------------
# losses (batch loss = mean over sequences of per-sequence masked means)
# --------------------------------------------------------------------------

def _per_sequence_weights(mask: Tensor) -> Tensor:
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("every sequence needs at least one unmasked position")
    nseq = 1 if mask.ndim == 1 else mask.shape[0]
    return mask / counts / nseq


def masked_cross_entropy(logits: Tensor, targets: Tensor, mask: Tensor):
    """(T, V) or (B, T, V) logits. Returns (loss, dlogits)."""
    targets = np.asarray(targets)
    w = _per_sequence_weights(mask)
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    nll = logsum - picked
    loss = float((nll * w).sum())
    probs = np.exp(z - logsum[..., None])
    np.put_along_axis(probs, targets[..., None], np.take_along_axis(probs, targets[..., None], -1) - 1.0, -1)
    return loss, (probs * w[..., None]).astype(logits.dtype, copy=False)


def mse_loss(pred: Tensor, target: Tensor, mask: Tensor):
    """Squared error averaged over unmasked positions (and output channels)."""
    pred = np.asarray(pred)
    diff = pred - np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    w = _per_sequence_weights(mask)
    if pred.ndim > w.ndim:
        w = w[..., None] / pred.shape[-1]
    loss = float((diff * diff * w).sum())
    return loss, (2.0 * diff * w).astype(pred.dtype, copy=False)


def masked_accuracy(logits: Tensor, targets: Tensor, mask: Tensor,
                    classes: int | None = None) -> tuple[int, int]:
    """(correct, counted) over unmasked positions.

    With ``classes``, the prediction is the argmax over the first ``classes``
    logits only (the answer symbols of a task).
    """
    mask = np.asarray(mask) > 0
    if classes is not None:
        logits = logits[..., :classes]
    hit = (logits.argmax(axis=-1) == np.asarray(targets)) & mask
    return int(hit.sum()), int(mask.sum())
