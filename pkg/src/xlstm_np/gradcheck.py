"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-6


def numerical_grad(loss_fn: Callable[[], float], arr: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``arr``.

    ``arr`` is perturbed in place and restored; ``loss_fn`` must read it.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = loss_fn()
        flat[i] = orig - step
        fm = loss_fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max absolute deviation scaled by the larger of the two gradients' max-norms.

    ``floor`` acts as an absolute tolerance: groups whose true gradient is
    identically zero (e.g. a uniform input-gate shift that cancels in c/n)
    only carry finite-difference noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max(), floor)
    return float(np.abs(a - n).max() / scale)


def check_groups(loss_fn: Callable[[], float], params: dict[str, np.ndarray],
                 grads: dict[str, np.ndarray], step: float = FD_STEP,
                 scale_floor: float = 1e-4) -> dict[str, float]:
    """Relative error per named parameter group.

    Each group's floor is ``scale_floor`` times the largest gradient entry
    over all groups, so a group whose true gradient vanishes is judged
    against the model's gradient scale rather than its own noise.
    """
    numeric = {name: numerical_grad(loss_fn, arr, step) for name, arr in params.items()}
    global_scale = max([np.abs(g).max() for g in numeric.values() if g.size] + [0.0])
    floor = max(scale_floor * global_scale, 1e-12)
    return {name: rel_error(grads[name], numeric[name], floor) for name in params}
