"""Dense-array substrate and shared neural primitives.

Every primitive comes as a forward function plus a hand-written backward.
Arrays are plain ``numpy.ndarray`` objects (row-major, float64 unless a
caller asks for float32). Leading dimensions are treated as batch/time and
broadcast through untouched.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special, stats

Tensor = np.ndarray

ACTIVATIONS = ("sigmoid", "tanh", "exp", "gelu", "swish", "identity")

GROUPNORM_EPS = 1e-5

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class NumericOverflowError(ArithmeticError):
    """Raised when an operation produces a non-finite value.

    ``index`` holds the (multi-)index of the first offending element.
    """

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


class NonFiniteStateError(NumericOverflowError):
    """A recurrent state component became non-finite at some timestep."""

    def __init__(self, message: str, timestep: int, component: str, index=None):
        super().__init__(message, index)
        self.timestep = timestep
        self.component = component


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams on any platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def first_nonfinite(x: Tensor):
    bad = ~np.isfinite(x)
    if not bad.any():
        return None
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(bad)), x.shape))


def check_finite(x: Tensor, what: str) -> Tensor:
    idx = first_nonfinite(x)
    if idx is not None:
        raise NumericOverflowError(f"non-finite value in {what} at index {idx}", idx)
    return x


def trunc_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> Tensor:
    """Zero-mean normal samples truncated at ``bound`` standard deviations."""
    size = int(np.prod(shape))
    draws = stats.truncnorm.rvs(-bound, bound, size=size, random_state=rng)
    return (std * np.asarray(draws, dtype=np.float64)).reshape(shape)


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    return special.expit(x)


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) computed as -softplus(-x)."""
    return -np.logaddexp(0.0, -x)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return special.expit(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "exp":
        with np.errstate(over="ignore"):
            y = np.exp(x)
        idx = first_nonfinite(y)
        if idx is not None:
            raise NumericOverflowError(f"exp overflow at index {idx}", idx)
        return y
    if kind == "gelu":
        return 0.5 * x * (1.0 + special.erf(x / math.sqrt(2.0)))
    if kind == "swish":
        return x * special.expit(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(x: Tensor, kind: str, dy: Tensor) -> Tensor:
    """Backward of :func:`activation`, derivative taken at pre-activation ``x``."""
    if kind == "sigmoid":
        s = special.expit(x)
        return dy * s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(x)
        return dy * (1.0 - t * t)
    if kind == "exp":
        return dy * activation(x, "exp")
    if kind == "gelu":
        cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * x * x) / _SQRT_2PI
        return dy * (cdf + x * pdf)
    if kind == "swish":
        s = special.expit(x)
        return dy * (s + x * s * (1.0 - s))
    if kind == "identity":
        return dy
    raise ValueError(f"unknown activation {kind!r}")


# --------------------------------------------------------------------------
# linear maps (dense or block-diagonal)
# --------------------------------------------------------------------------

def block_diag_param_count(d_in: int, d_out: int, heads: int, bias: bool = True) -> int:
    """Stored parameters of a block-diagonal map; off-block zeros are not stored."""
    if d_in % heads or d_out % heads:
        raise ValueError("dimensions must be divisible by the number of heads")
    return d_in * d_out // heads + (d_out if bias else 0)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None, block_diag_heads: int | None = None) -> Tensor:
    """y = W x + b on the last axis.

    Dense weights have shape (d_out, d_in). Block-diagonal weights are stored
    compactly as (heads, d_out/heads, d_in/heads).
    """
    if W.ndim == 3 or block_diag_heads is not None:
        if W.ndim != 3 or (block_diag_heads is not None and W.shape[0] != block_diag_heads):
            raise ValueError(f"block-diagonal weight must have shape (heads, out, in), got {W.shape}")
        h, do, di = W.shape
        if x.shape[-1] != h * di:
            raise ValueError(f"input width {x.shape[-1]} does not match block-diagonal weight {W.shape}")
        lead = x.shape[:-1]
        xh = x.reshape(-1, h, di).transpose(1, 0, 2)
        y = np.matmul(xh, W.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(*lead, h * do)
    else:
        if x.shape[-1] != W.shape[1]:
            raise ValueError(f"input width {x.shape[-1]} does not match weight {W.shape}")
        y = x @ W.T
    if b is not None:
        if b.shape != (y.shape[-1],):
            raise ValueError(f"bias shape {b.shape} does not match output width {y.shape[-1]}")
        y = y + b
    return y


def linear_backward(x: Tensor, W: Tensor, dy: Tensor, bias: bool = True):
    """Returns (dx, dW, db); db is None when ``bias`` is False."""
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0) if bias else None
    if W.ndim == 3:
        h, do, di = W.shape
        lead = x.shape[:-1]
        xh = x.reshape(-1, h, di).transpose(1, 0, 2)
        gh = dy.reshape(-1, h, do).transpose(1, 0, 2)
        dW = np.matmul(gh.transpose(0, 2, 1), xh)
        dx = np.matmul(gh, W).transpose(1, 0, 2).reshape(*lead, h * di)
    else:
        x2 = x.reshape(-1, x.shape[-1])
        g2 = dy.reshape(-1, dy.shape[-1])
        dW = g2.T @ x2
        dx = dy @ W
    return dx, dW, db


# --------------------------------------------------------------------------
# depthwise causal convolution
# --------------------------------------------------------------------------

def causal_conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise causal convolution along the time axis (second to last).

    y[t, c] = bias[c] + sum_j kernel[j, c] * x[t - w + 1 + j, c], zeros before t=0.
    """
    w, d = kernel.shape
    if w < 1 or x.shape[-1] != d:
        raise ValueError(f"kernel {kernel.shape} incompatible with input {x.shape}")
    T = x.shape[-2]
    pad = [(0, 0)] * x.ndim
    pad[-2] = (w - 1, 0)
    xp = np.pad(x, pad)
    y = np.zeros_like(x) if bias is None else np.broadcast_to(bias, x.shape).copy()
    for j in range(w):
        y += kernel[j] * xp[..., j:j + T, :]
    return y


def causal_conv1d_backward(x: Tensor, kernel: Tensor, dy: Tensor, bias: bool = True):
    """Returns (dx, dkernel, dbias)."""
    w, d = kernel.shape
    T = x.shape[-2]
    pad = [(0, 0)] * x.ndim
    pad[-2] = (w - 1, 0)
    xp = np.pad(x, pad)
    dxp = np.zeros_like(xp)
    dk = np.empty_like(kernel)
    for j in range(w):
        dk[j] = (dy * xp[..., j:j + T, :]).reshape(-1, d).sum(axis=0)
        dxp[..., j:j + T, :] += kernel[j] * dy
    db = dy.reshape(-1, d).sum(axis=0) if bias else None
    return dxp[..., w - 1:, :], dk, db


# --------------------------------------------------------------------------
# head-wise normalization
# --------------------------------------------------------------------------

def group_norm(x: Tensor, num_heads: int, gain: Tensor | None = None, shift: Tensor | None = None,
               eps: float = GROUPNORM_EPS):
    """Head-wise layer norm over the last axis. Returns (y, cache).

    With ``num_heads=1`` this is an ordinary LayerNorm.
    """
    d = x.shape[-1]
    if d % num_heads:
        raise ValueError(f"width {d} not divisible by {num_heads} heads")
    xh = x.reshape(*x.shape[:-1], num_heads, d // num_heads)
    mu = xh.mean(axis=-1, keepdims=True)
    xc = xh - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).reshape(x.shape)
    y = xhat
    if gain is not None:
        y = y * gain
    if shift is not None:
        y = y + shift
    return y, (xhat, rstd, num_heads, gain is not None, shift is not None, gain)


def group_norm_backward(cache, dy: Tensor):
    """Returns (dx, dgain, dshift)."""
    xhat, rstd, num_heads, has_gain, has_shift, gain = cache
    d = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, d).sum(axis=0) if has_gain else None
    dshift = dy.reshape(-1, d).sum(axis=0) if has_shift else None
    dxhat = dy * gain if has_gain else dy
    shape_h = (*xhat.shape[:-1], num_heads, d // num_heads)
    g = dxhat.reshape(shape_h)
    xh = xhat.reshape(shape_h)
    dx = rstd * (g - g.mean(axis=-1, keepdims=True) - xh * (g * xh).mean(axis=-1, keepdims=True))
    return dx.reshape(xhat.shape), dgain, dshift


def layer_norm(x: Tensor, gain: Tensor | None = None, shift: Tensor | None = None, eps: float = GROUPNORM_EPS):
    return group_norm(x, 1, gain, shift, eps)


layer_norm_backward = group_norm_backward
