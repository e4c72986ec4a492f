"""Synthetic task generators: parity, multi-query associative recall, nearest neighbor search.

Every generator is a pure function of (config, rng). Samples are padded to
``context`` so a batch is a plain stack.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor

PARITY_A, PARITY_B, PARITY_PAD = 0, 1, 2
MQAR_ZERO = 0
TASK_KINDS = ("parity", "mqar", "nns")
RANDOM_BASELINE = {"parity": 0.5}


@dataclass(frozen=True)
class TaskConfig:
    """``min_len``/``max_len`` bound the parity string or NNS sequence length.

    ``context`` is the padded length of every sample; ``None`` means the
    shortest context that fits ``max_len``.
    """
    kind: str = "parity"
    vocab_size: int = 3
    min_len: int = 2
    max_len: int = 32
    context: int | None = None
    kv_pairs: int = 4
    zipf_exponent: float = 1.0
    nns_mask: str = "final"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if self.kind == "parity" and self.vocab_size != 3:
            raise ValueError("parity uses a vocabulary of 3 tokens (a, b, pad)")
        if self.kind == "mqar":
            if self.vocab_size % 2 or self.vocab_size < 4:
                raise ValueError("MQAR vocabulary must be even and >= 4")
            if self.kv_pairs > self.vocab_size // 2 - 1:
                raise ValueError(f"{self.kv_pairs} kv pairs exceed the key vocabulary of {self.vocab_size // 2 - 1}")
            if 4 * self.kv_pairs > self.seq_len:
                raise ValueError("context too short for the kv prefix plus one query per key")
        if self.kind == "nns" and self.min_len < 2:
            raise ValueError("NNS needs a reference plus at least one candidate")
        if self.nns_mask not in ("final", "all"):
            raise ValueError("nns_mask must be 'final' or 'all'")
        if self.context is not None and self.context < self.seq_len:
            raise ValueError(f"context {self.context} shorter than required {self.seq_len}")

    @property
    def seq_len(self) -> int:
        """Padded sample length."""
        if self.context is not None:
            return self.context
        return self.max_len + 1 if self.kind == "parity" else self.max_len

    @property
    def input_dim(self) -> int | None:
        return 3 if self.kind == "nns" else None


@dataclass
class TaskSample:
    inputs: Tensor     # (T,) int ids, or (T, 3) real rows for NNS
    targets: Tensor    # (T,) int ids, or (T,) float values for NNS
    mask: Tensor       # (T,) float in {0, 1}
    length: int        # number of meaningful positions before padding


def _length(cfg: TaskConfig, rng: np.random.Generator) -> int:
    return int(rng.integers(cfg.min_len, cfg.max_len + 1))


def gen_parity(cfg: TaskConfig, rng: np.random.Generator, length: int | None = None) -> TaskSample:
    """Random a/b string followed by a pad query; the answer is a iff the number of b's is even."""
    L = _length(cfg, rng) if length is None else length
    bits = rng.integers(0, 2, L)
    return parity_sample(bits, cfg.seq_len)


def parity_sample(bits, seq_len: int | None = None) -> TaskSample:
    """Build a parity sample from an explicit a/b string (0 = a, 1 = b)."""
    bits = np.asarray(bits, dtype=np.int64)
    L = bits.size
    T = L + 1 if seq_len is None else seq_len
    if T < L + 1:
        raise ValueError("sequence does not fit the context")
    inputs = np.full(T, PARITY_PAD, dtype=np.int64)
    inputs[:L] = bits
    targets = np.full(T, PARITY_PAD, dtype=np.int64)
    targets[L] = PARITY_B if bits.sum() % 2 else PARITY_A
    mask = np.zeros(T)
    mask[L] = 1.0
    return TaskSample(inputs, targets, mask, L + 1)


def zipf_slots(n_slots: int, n_pick: int, exponent: float, rng: np.random.Generator) -> Tensor:
    """Pick ``n_pick`` distinct slots, slot r weighted by 1 / (r + 1)**exponent."""
    w = 1.0 / np.arange(1, n_slots + 1) ** exponent
    return np.sort(rng.choice(n_slots, size=n_pick, replace=False, p=w / w.sum()))


def gen_mqar(cfg: TaskConfig, rng: np.random.Generator) -> TaskSample:
    """Key/value prefix, then queries of every key at power-law distributed offsets.

    Keys come from [1, V/2), values from [V/2, V); token 0 fills the gaps.
    The target at a query position is the value bound to that key.
    """
    V, P, T = cfg.vocab_size, cfg.kv_pairs, cfg.seq_len
    keys = rng.choice(np.arange(1, V // 2), size=P, replace=False)
    values = rng.integers(V // 2, V, P)
    inputs = np.full(T, MQAR_ZERO, dtype=np.int64)
    inputs[0:2 * P:2] = keys
    inputs[1:2 * P:2] = values
    n_slots = (T - 2 * P) // 2
    slots = zipf_slots(n_slots, P, cfg.zipf_exponent, rng)
    order = rng.permutation(P)
    targets = np.zeros(T, dtype=np.int64)
    mask = np.zeros(T)
    pos = 2 * P + 2 * slots
    inputs[pos] = keys[order]
    targets[pos] = values[order]
    mask[pos] = 1.0
    return TaskSample(inputs, targets, mask, T)


def nns_target(rows: Tensor, t: int) -> float:
    """Value of the candidate among positions 1..t most similar to the reference row 0."""
    sims = rows[1:t + 1, :2] @ rows[0, :2]
    return float(rows[1 + int(np.argmax(sims)), 2])


def gen_nns(cfg: TaskConfig, rng: np.random.Generator, length: int | None = None) -> TaskSample:
    """Unit 2-vectors with uniform values; regress the value of the reference's nearest neighbour."""
    L = _length(cfg, rng) if length is None else length
    T = cfg.seq_len
    angle = rng.uniform(0.0, 2.0 * np.pi, L)
    rows = np.zeros((T, 3))
    rows[:L, 0] = np.cos(angle)
    rows[:L, 1] = np.sin(angle)
    rows[:L, 2] = rng.uniform(0.0, 1.0, L)
    targets = np.zeros(T)
    # running argmax of the similarity to the reference over positions 1..t
    sims = rows[1:L, :2] @ rows[0, :2]
    best = np.maximum.accumulate(sims)
    idx = np.array([int(np.flatnonzero(sims[:k + 1] == best[k])[0]) for k in range(L - 1)])
    targets[1:L] = rows[1 + idx, 2]
    mask = np.zeros(T)
    if cfg.nns_mask == "final":
        mask[L - 1] = 1.0
    else:
        mask[1:L] = 1.0
    return TaskSample(rows, targets, mask, L)


GENERATORS = {"parity": gen_parity, "mqar": gen_mqar, "nns": gen_nns}


def generate(cfg: TaskConfig, rng: np.random.Generator) -> TaskSample:
    return GENERATORS[cfg.kind](cfg, rng)


def gen_batch(cfg: TaskConfig, rng: np.random.Generator, batch: int):
    """Stacked (inputs, targets, mask) for ``batch`` independent samples."""
    samples = [generate(cfg, rng) for _ in range(batch)]
    return (np.stack([s.inputs for s in samples]), np.stack([s.targets for s in samples]),
            np.stack([s.mask for s in samples]))


def scaled_accuracy(raw_acc: float, s_rand: float, floor: float | None = None) -> float:
    """Affine map sending the random baseline to 0 and perfect accuracy to 1."""
    if not 0.0 <= s_rand < 1.0:
        raise ValueError("s_rand must lie in [0, 1)")
    if not 0.0 <= raw_acc <= 1.0:
        raise ValueError("raw accuracy must lie in [0, 1]")
    score = (raw_acc - s_rand) / (1.0 - s_rand)
    return score if floor is None else max(score, floor)


# --------------------------------------------------------------------------
# line-delimited JSON
# --------------------------------------------------------------------------

def sample_to_json(sample: TaskSample) -> str:
    return json.dumps({"inputs": sample.inputs.tolist(), "targets": sample.targets.tolist(),
                       "mask": sample.mask.astype(int).tolist(), "length": sample.length})


def sample_from_json(line: str) -> TaskSample:
    d = json.loads(line)
    inputs = np.asarray(d["inputs"])
    targets = np.asarray(d["targets"])
    return TaskSample(inputs, targets, np.asarray(d["mask"], dtype=float), int(d["length"]))


def write_samples(path, samples) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(sample_to_json(s) + "\n")


def read_samples(path) -> list[TaskSample]:
    with open(path) as fh:
        return [sample_from_json(line) for line in fh if line.strip()]
