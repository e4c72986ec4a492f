"""Randomized equivalence trials and model-level gradient checks."""
from __future__ import annotations

import dataclasses

import numpy as np

from .blocks import StackConfig, init_model, model_backward, model_forward
from .gradcheck import FD_STEP, check_groups
from .mlstm import (MLstmConfig, init_mlstm, mlstm_forward_unstabilized, mlstm_parallel_forward,
                    mlstm_recurrent_forward)
from .numerics import make_rng
from .slstm import SLstmConfig, init_slstm, slstm_forward, slstm_forward_unstabilized

FORGET_KINDS = ("sigmoid", "exp")


def max_rel_error(a: np.ndarray, ref: np.ndarray) -> float:
    """max |a - ref| / max(max |ref|, 1e-300)."""
    return float(np.abs(a - ref).max() / max(np.abs(ref).max(), 1e-300))


def _random_width(rng, max_d: int):
    heads = int(rng.choice([h for h in (1, 2, 4) if h <= max_d]))
    dh = int(rng.integers(1, max_d // heads + 1))
    return heads, heads * dh


def equivalence_trial(seed: int, max_t: int = 64, max_d: int = 32) -> dict[str, float]:
    """One random configuration; returns relative errors for every equivalence.

    ``slstm_stabilized``: stabilized vs plain exponential-gate sLSTM.
    ``mlstm_stabilized``: stabilized recurrent vs plain mLSTM.
    ``mlstm_parallel``: parallel vs recurrent mLSTM.
    """
    if max_t < 1 or max_d < 1:
        raise ValueError("max_t and max_d must be positive")
    rng = make_rng(seed)
    T = int(rng.integers(1, max_t + 1))
    forget = FORGET_KINDS[seed % 2]
    d_in = int(rng.integers(1, max_d + 1))
    x = rng.normal(0.0, float(rng.uniform(0.5, 3.0)), (T, d_in))

    heads, d = _random_width(rng, max_d)
    scfg = SLstmConfig(d_in=d_in, d=d, num_heads=heads, forget_activation=forget)
    sp = init_slstm(scfg, rng)
    h_stab, _, _ = slstm_forward(sp, x)
    h_ref, _, _ = slstm_forward_unstabilized(sp, x)

    heads, d = _random_width(rng, max_d)
    mcfg = MLstmConfig(d_in=d_in, d=d, num_heads=heads, forget_activation=forget,
                       output_gate=bool(rng.integers(0, 2)))
    mp = init_mlstm(mcfg, rng)
    h_rec, _, _ = mlstm_recurrent_forward(mp, x)
    h_par, _ = mlstm_parallel_forward(mp, x)
    h_plain, _ = mlstm_forward_unstabilized(mp, x)
    return {
        "slstm_stabilized": max_rel_error(h_stab, h_ref),
        "mlstm_stabilized": max_rel_error(h_rec, h_plain),
        "mlstm_parallel": max_rel_error(h_par, h_rec),
    }


def run_equivalence(trials: int, seed: int = 0, max_t: int = 64, max_d: int = 32):
    """Returns (worst error per check, seed of the worst trial per check)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    worst: dict[str, float] = {}
    worst_seed: dict[str, int] = {}
    for k in range(trials):
        s = seed + k
        for name, err in equivalence_trial(s, max_t, max_d).items():
            if err > worst.get(name, -1.0):
                worst[name], worst_seed[name] = err, s
    return worst, worst_seed


def model_gradcheck(cfg: StackConfig, seed: int = 0, T: int = 8, batch: int = 2,
                    step: float = FD_STEP) -> dict[str, float]:
    """Per-parameter relative error of model_backward against central differences.

    Runs in float64 with sLSTM clipping disabled; the scalar loss is
    sum(G * outputs) for a fixed random G.
    """
    cfg = dataclasses.replace(cfg, dtype="float64", slstm_clip=None)
    rng = make_rng(seed)
    model = init_model(cfg, rng)
    if cfg.input_dim is None:
        inputs = rng.integers(0, cfg.vocab_size, (batch, T))
    else:
        inputs = rng.normal(size=(batch, T, cfg.input_dim))
    G = rng.normal(size=(batch, T, cfg.out_dim))
    out, caches = model_forward(model, inputs)
    grads = model_backward(model, caches, G).arrays()

    def loss():
        return float((model_forward(model, inputs)[0] * G).sum())

    return check_groups(loss, model.arrays(), grads, step)
