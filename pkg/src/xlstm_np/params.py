"""Tiny helpers for dataclass-held parameter trees."""
from __future__ import annotations

import dataclasses

import numpy as np


def tree_map(fn, obj):
    """Apply ``fn`` to every ndarray leaf of a ParamSet / list tree."""
    if isinstance(obj, np.ndarray):
        return fn(obj)
    if isinstance(obj, ParamSet):
        repl = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, (np.ndarray, ParamSet, list)):
                repl[f.name] = tree_map(fn, v)
        return dataclasses.replace(obj, **repl)
    if isinstance(obj, list):
        return [tree_map(fn, v) for v in obj]
    return obj


def flatten(obj, prefix: str = "") -> dict[str, np.ndarray]:
    """Dotted-name view of every ndarray leaf, in declaration order."""
    out: dict[str, np.ndarray] = {}
    if isinstance(obj, np.ndarray):
        out[prefix.rstrip(".")] = obj
    elif isinstance(obj, ParamSet):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, (np.ndarray, ParamSet, list)):
                out.update(flatten(v, f"{prefix}{f.name}."))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(flatten(v, f"{prefix}{i}."))
    return out


class ParamSet:
    """Mixin for dataclasses whose ndarray fields are trainable parameters.

    Non-array fields (configs, flags) are skipped; ``None`` means absent.
    Nested ParamSets and lists of them are flattened with dotted names.
    """

    def arrays(self) -> dict[str, np.ndarray]:
        return flatten(self)

    def zeros_like(self):
        return tree_map(np.zeros_like, self)

    def copy(self):
        return tree_map(np.copy, self)

    def astype(self, dtype):
        return tree_map(lambda a: a.astype(dtype), self)

    def num_params(self) -> int:
        return sum(v.size for v in self.arrays().values())
