"""sLSTM: exponential gating, normalizer/stabilizer states, head-wise memory mixing.

Shapes: sequences are (B, T, d) internally; 2-D (T, d) inputs are accepted
and returned without the batch axis. Gate order everywhere is z, i, f, o.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    NonFiniteStateError,
    Tensor,
    first_nonfinite,
    linear,
    linear_backward,
    log_sigmoid,
    sigmoid,
    trunc_normal,
)
from .params import ParamSet

GATES = ("z", "i", "f", "o")
DEFAULT_CLIP = 10.0


@dataclass(frozen=True)
class SLstmConfig:
    d_in: int
    d: int
    num_heads: int = 4
    forget_activation: str = "sigmoid"
    input_activation: str = "exp"
    block_diag_input: bool = False
    clip: float | None = DEFAULT_CLIP

    def __post_init__(self):
        if self.d % self.num_heads:
            raise ValueError(f"d={self.d} not divisible by num_heads={self.num_heads}")
        if self.forget_activation not in ("sigmoid", "exp"):
            raise ValueError(f"forget_activation must be sigmoid or exp, got {self.forget_activation!r}")
        if self.input_activation not in ("sigmoid", "exp"):
            raise ValueError(f"input_activation must be sigmoid or exp, got {self.input_activation!r}")
        if self.block_diag_input and self.d_in != self.d:
            raise ValueError("block-diagonal input weights need d_in == d")

    @property
    def head_dim(self) -> int:
        return self.d // self.num_heads


@dataclass
class SLstmParams(ParamSet):
    cfg: SLstmConfig
    W_z: Tensor
    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    R_z: Tensor
    R_i: Tensor
    R_f: Tensor
    R_o: Tensor
    b_z: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor

    def W(self, g):
        return getattr(self, "W_" + g)

    def R(self, g):
        return getattr(self, "R_" + g)

    def b(self, g):
        return getattr(self, "b_" + g)

    def stacked_recurrent(self) -> Tensor:
        """(heads, dh_in, 4*dh) so that h_head @ Rc gives all four gate slices."""
        return np.concatenate([self.R(g).transpose(0, 2, 1) for g in GATES], axis=2)


def forget_bias_init(d: int, lo: float = 3.0, hi: float = 6.0) -> Tensor:
    """Forget-gate biases spaced equidistantly over [lo, hi] across cells."""
    return np.linspace(lo, hi, d)


def init_slstm(cfg: SLstmConfig, rng: np.random.Generator) -> SLstmParams:
    h, dh = cfg.num_heads, cfg.head_dim
    arrays = {}
    for g in GATES:
        if cfg.block_diag_input:
            arrays["W_" + g] = trunc_normal(rng, (h, dh, dh), np.sqrt(0.4 / dh))
        else:
            arrays["W_" + g] = trunc_normal(rng, (cfg.d, cfg.d_in), np.sqrt(0.4 / cfg.d_in))
    for g in GATES:
        arrays["R_" + g] = trunc_normal(rng, (h, dh, dh), np.sqrt(0.4 / dh))
    arrays["b_z"] = np.zeros(cfg.d)
    arrays["b_i"] = rng.normal(0.0, 0.1, cfg.d)
    arrays["b_f"] = forget_bias_init(cfg.d)
    arrays["b_o"] = np.zeros(cfg.d)
    return SLstmParams(cfg=cfg, **arrays)


@dataclass
class SLstmState:
    c: Tensor
    n: Tensor
    m: Tensor
    h: Tensor

    @classmethod
    def zeros(cls, d: int, batch: int | None = None, dtype=np.float64) -> SLstmState:
        shape = (d,) if batch is None else (batch, d)
        return cls(*(np.zeros(shape, dtype=dtype) for _ in range(4)))


@dataclass
class SLstmCache:
    """Everything the backward recurrence reads, stacked over time (B, T, ...)."""
    x: Tensor | None
    pre: Tensor        # (B, T, 4, d) gate pre-activations z~, i~, f~, o~
    z: Tensor
    ip: Tensor         # stabilized input gate
    fp: Tensor         # stabilized forget gate
    o: Tensor
    c: Tensor
    n: Tensor
    m: Tensor
    h: Tensor
    state0: SLstmState
    squeeze: bool = False
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.pre.shape[1]


def _log_gate(pre: Tensor, kind: str) -> Tensor:
    return pre if kind == "exp" else log_sigmoid(pre)


def _dlog_gate(pre: Tensor, kind: str) -> Tensor:
    # d/dx log(exp(x)) = 1 ; d/dx log(sigmoid(x)) = sigmoid(-x)
    return np.ones_like(pre) if kind == "exp" else sigmoid(-pre)


def _cell_update(cfg: SLstmConfig, pre: Tensor, c: Tensor, n: Tensor, m: Tensor):
    """One stabilized update from full pre-activations ``pre`` (..., 4, d)."""
    z = np.tanh(pre[..., 0, :])
    log_i = _log_gate(pre[..., 1, :], cfg.input_activation)
    log_f = _log_gate(pre[..., 2, :], cfg.forget_activation)
    o = sigmoid(pre[..., 3, :])
    m_new = np.maximum(log_f + m, log_i)
    ip = np.exp(log_i - m_new)
    fp = np.exp(log_f + m - m_new)
    c_new = fp * c + ip * z
    n_new = fp * n + ip
    h_new = o * (c_new / n_new)
    return z, ip, fp, o, c_new, n_new, m_new, h_new


def _recurrent_preact(params: SLstmParams, h: Tensor, Rc: Tensor | None = None) -> Tensor:
    """Block-diagonal R h for all four gates; h is (B, d) -> (B, 4, d)."""
    cfg = params.cfg
    nh, dh = cfg.num_heads, cfg.head_dim
    if Rc is None:
        Rc = params.stacked_recurrent()
    B = h.shape[0]
    rec = np.matmul(h.reshape(B, nh, dh).transpose(1, 0, 2), Rc)      # (nh, B, 4dh)
    return rec.reshape(nh, B, 4, dh).transpose(1, 2, 0, 3).reshape(B, 4, nh * dh)


def input_preact(params: SLstmParams, x: Tensor) -> Tensor:
    """W_g x for all gates, shape (..., 4, d); biases are added in the recurrence."""
    heads = params.cfg.num_heads if params.cfg.block_diag_input else None
    return np.stack([linear(x, params.W(g), None, heads) for g in GATES], axis=-2)


def _bias(params: SLstmParams) -> Tensor:
    return np.stack([params.b(g) for g in GATES], axis=0)


def slstm_step(params: SLstmParams, state: SLstmState, x: Tensor):
    """Advance one timestep. Returns (new_state, cache_entry dict).

    ``x`` is (d_in,) or (B, d_in) and must match the state's batch layout.
    """
    cfg = params.cfg
    single = x.ndim == 1
    xb = x[None] if single else x
    hb = state.h[None] if single else state.h
    pre = input_preact(params, xb) + _bias(params) + _recurrent_preact(params, hb)
    cb, nb, mb = (a[None] if single else a for a in (state.c, state.n, state.m))
    z, ip, fp, o, c, n, m, h = _cell_update(cfg, pre, cb, nb, mb)
    for name, arr in (("c", c), ("n", n), ("m", m), ("h", h)):
        idx = first_nonfinite(arr)
        if idx is not None:
            raise NonFiniteStateError(f"non-finite sLSTM {name} state", 0, name, idx)
    sq = (lambda a: a[0]) if single else (lambda a: a)
    new = SLstmState(sq(c), sq(n), sq(m), sq(h))
    entry = dict(pre=sq(pre), z=sq(z), ip=sq(ip), fp=sq(fp), o=sq(o))
    return new, entry


def slstm_recurrence(params: SLstmParams, wx: Tensor, state0: SLstmState | None = None,
                     x: Tensor | None = None):
    """Run the cell over precomputed input contributions ``wx`` (B, T, 4, d).

    Returns (h_seq, cache, final_state). ``x`` is stored in the cache only so
    that :func:`slstm_backward` can form input-weight gradients.
    """
    cfg = params.cfg
    B, T = wx.shape[:2]
    d = cfg.d
    dtype = wx.dtype
    if state0 is None:
        state0 = SLstmState.zeros(d, B, dtype)
    Rc = params.stacked_recurrent().astype(dtype, copy=False)
    pre_all = wx + _bias(params).astype(dtype, copy=False)
    z_s, ip_s, fp_s, o_s, c_s, n_s, m_s, h_s = (np.empty((B, T, d), dtype) for _ in range(8))
    c, n, m, h = state0.c, state0.n, state0.m, state0.h
    for t in range(T):
        pre_all[:, t] += _recurrent_preact(params, h, Rc)
        z, ip, fp, o, c, n, m, h = _cell_update(cfg, pre_all[:, t], c, n, m)
        z_s[:, t], ip_s[:, t], fp_s[:, t], o_s[:, t] = z, ip, fp, o
        c_s[:, t], n_s[:, t], m_s[:, t], h_s[:, t] = c, n, m, h
    for name, arr in (("c", c_s), ("n", n_s), ("m", m_s), ("h", h_s)):
        idx = first_nonfinite(arr)
        if idx is not None:
            raise NonFiniteStateError(
                f"non-finite sLSTM {name} state at timestep {idx[1]}", idx[1], name, idx)
    cache = SLstmCache(x=x, pre=pre_all, z=z_s, ip=ip_s, fp=fp_s, o=o_s, c=c_s, n=n_s,
                       m=m_s, h=h_s, state0=state0)
    return h_s, cache, SLstmState(c, n, m, h)


def slstm_forward(params: SLstmParams, x_seq: Tensor, state0: SLstmState | None = None):
    """Sequential sLSTM over x_seq (T, d_in) or (B, T, d_in)."""
    if x_seq.ndim not in (2, 3) or x_seq.shape[-2] < 1:
        raise ValueError(f"expected (T, d_in) or (B, T, d_in) with T >= 1, got {x_seq.shape}")
    squeeze = x_seq.ndim == 2
    x = x_seq[None] if squeeze else x_seq
    if state0 is not None and squeeze:
        state0 = SLstmState(*(a[None] for a in (state0.c, state0.n, state0.m, state0.h)))
    h, cache, final = slstm_recurrence(params, input_preact(params, x), state0, x)
    cache.squeeze = squeeze
    if squeeze:
        h = h[0]
        final = SLstmState(final.c[0], final.n[0], final.m[0], final.h[0])
    return h, cache, final


def clip_recurrent_grad(delta: Tensor, limit: float | None) -> Tensor:
    """Elementwise clamp of the recurrent hidden-state gradient to [-limit, limit]."""
    if limit is None:
        return delta
    return np.clip(delta, -limit, limit)


def slstm_recurrence_backward(params: SLstmParams, cache: SLstmCache, dh_ext: Tensor):
    """Backward through the recurrence.

    Returns (dpre, dR, db): pre-activation gradients (B, T, 4, d) and the
    gradients of the recurrent matrices and biases keyed by gate.
    """
    cfg = params.cfg
    if dh_ext.shape != cache.h.shape:
        raise ValueError(f"upstream shape {dh_ext.shape} does not match cache {cache.h.shape}")
    B, T, d = cache.h.shape
    nh, dh = cfg.num_heads, cfg.head_dim
    Rc = params.stacked_recurrent().astype(cache.h.dtype, copy=False)
    RcT = Rc.transpose(0, 2, 1)                                # (nh, 4dh, dh)
    dlogi = _dlog_gate(cache.pre[:, :, 1], cfg.input_activation)
    dlogf = _dlog_gate(cache.pre[:, :, 2], cfg.forget_activation)
    c_prev = np.concatenate([cache.state0.c[:, None], cache.c[:, :-1]], axis=1)
    n_prev = np.concatenate([cache.state0.n[:, None], cache.n[:, :-1]], axis=1)
    dpre = np.empty_like(cache.pre)
    dh_rec = np.zeros((B, d), cache.h.dtype)
    dc_next = np.zeros((B, d), cache.h.dtype)
    dn_next = np.zeros((B, d), cache.h.dtype)
    for t in range(T - 1, -1, -1):
        dh_t = dh_ext[:, t] + clip_recurrent_grad(dh_rec, cfg.clip)
        o, c, n = cache.o[:, t], cache.c[:, t], cache.n[:, t]
        inv_n = 1.0 / n
        dc = dc_next + dh_t * o * inv_n
        dn = dn_next - dh_t * o * c * inv_n * inv_n
        ip, fp, z = cache.ip[:, t], cache.fp[:, t], cache.z[:, t]
        dpre[:, t, 0] = dc * ip * (1.0 - z * z)
        dpre[:, t, 1] = (dc * z + dn) * ip * dlogi[:, t]
        dpre[:, t, 2] = (dc * c_prev[:, t] + dn * n_prev[:, t]) * fp * dlogf[:, t]
        dpre[:, t, 3] = dh_t * (c * inv_n) * o * (1.0 - o)
        g = dpre[:, t].reshape(B, 4, nh, dh).transpose(2, 0, 1, 3).reshape(nh, B, 4 * dh)
        dh_rec = np.matmul(g, RcT).transpose(1, 0, 2).reshape(B, d)
        dc_next = fp * dc
        dn_next = fp * dn
    h_prev = np.concatenate([cache.state0.h[:, None], cache.h[:, :-1]], axis=1)
    hp = h_prev.reshape(B * T, nh, dh).transpose(1, 2, 0)      # (nh, dh_in, N)
    gp = dpre.reshape(B * T, 4, nh, dh).transpose(2, 0, 1, 3).reshape(nh, B * T, 4 * dh)
    dRc = np.matmul(hp, gp)                                    # (nh, dh_in, 4dh)
    dR = {g: dRc[:, :, k * dh:(k + 1) * dh].transpose(0, 2, 1).copy() for k, g in enumerate(GATES)}
    db = {g: dpre[:, :, k].reshape(-1, d).sum(axis=0) for k, g in enumerate(GATES)}
    return dpre, dR, db


def slstm_backward(params: SLstmParams, cache: SLstmCache, upstream: Tensor):
    """Gradients for all parameters and the input sequence.

    Returns (grads: SLstmParams, dx) with dx shaped like the forward input.
    """
    if cache.x is None:
        raise ValueError("cache has no stored input; use slstm_recurrence_backward")
    up = upstream[None] if cache.squeeze else upstream
    dpre, dR, db = slstm_recurrence_backward(params, cache, up)
    dx = np.zeros_like(cache.x)
    grads = {}
    for k, g in enumerate(GATES):
        dxg, dW, _ = linear_backward(cache.x, params.W(g), dpre[:, :, k], bias=False)
        dx += dxg
        grads["W_" + g] = dW
        grads["R_" + g] = dR[g]
        grads["b_" + g] = db[g]
    out = SLstmParams(cfg=params.cfg, **grads)
    return out, (dx[0] if cache.squeeze else dx)


# --------------------------------------------------------------------------
# independent reference: direct unstabilized evaluation
# --------------------------------------------------------------------------

def dense_recurrent(R: Tensor) -> Tensor:
    """Expand compact (heads, dh, dh) blocks into the full (d, d) matrix."""
    nh, dh, _ = R.shape
    full = np.zeros((nh * dh, nh * dh), dtype=R.dtype)
    for k in range(nh):
        full[k * dh:(k + 1) * dh, k * dh:(k + 1) * dh] = R[k]
    return full


def slstm_forward_unstabilized(params: SLstmParams, x_seq: Tensor):
    """Plain exponential-gate recurrence without the stabilizer state.

    Single sequence (T, d_in). Returns (h, c, n), each (T, d). Overflows for
    large pre-activations; intended as an oracle on moderate inputs.
    """
    cfg = params.cfg
    T = x_seq.shape[0]
    if cfg.block_diag_input:
        Wd = {g: dense_recurrent(params.W(g)) for g in GATES}
    else:
        Wd = {g: params.W(g) for g in GATES}
    Rd = {g: dense_recurrent(params.R(g)) for g in GATES}
    c = np.zeros(cfg.d)
    n = np.zeros(cfg.d)
    h = np.zeros(cfg.d)
    hs, cs, ns = [], [], []
    for t in range(T):
        pre = {g: Wd[g] @ x_seq[t] + Rd[g] @ h + params.b(g) for g in GATES}
        z = np.tanh(pre["z"])
        i = np.exp(pre["i"]) if cfg.input_activation == "exp" else 1.0 / (1.0 + np.exp(-pre["i"]))
        f = np.exp(pre["f"]) if cfg.forget_activation == "exp" else 1.0 / (1.0 + np.exp(-pre["f"]))
        o = 1.0 / (1.0 + np.exp(-pre["o"]))
        c = f * c + i * z
        n = f * n + i
        h = o * c / n
        hs.append(h)
        cs.append(c)
        ns.append(n)
    return np.array(hs), np.array(cs), np.array(ns)


# --------------------------------------------------------------------------
# vanilla LSTM (ablation baseline)
# --------------------------------------------------------------------------

@dataclass
class VanillaLstmParams(ParamSet):
    d_in: int
    d: int
    W_z: Tensor
    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    R_z: Tensor
    R_i: Tensor
    R_f: Tensor
    R_o: Tensor
    b_z: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor


@dataclass
class LstmState:
    c: Tensor
    h: Tensor

    @classmethod
    def zeros(cls, d: int, batch: int | None = None) -> LstmState:
        shape = (d,) if batch is None else (batch, d)
        return cls(np.zeros(shape), np.zeros(shape))


def init_vanilla_lstm(d_in: int, d: int, rng: np.random.Generator) -> VanillaLstmParams:
    arrays = {}
    for g in GATES:
        arrays["W_" + g] = trunc_normal(rng, (d, d_in), np.sqrt(0.4 / d_in))
        arrays["R_" + g] = trunc_normal(rng, (d, d), np.sqrt(0.4 / d))
        arrays["b_" + g] = np.zeros(d)
    arrays["b_f"] = forget_bias_init(d)
    return VanillaLstmParams(d_in=d_in, d=d, **arrays)


def lstm_step(params: VanillaLstmParams, state: LstmState, x: Tensor) -> LstmState:
    """c_t = f*c + i*z, h_t = o*tanh(c_t); sigmoid gates, tanh cell input."""
    pre = {g: x @ getattr(params, "W_" + g).T + state.h @ getattr(params, "R_" + g).T
           + getattr(params, "b_" + g) for g in GATES}
    z = np.tanh(pre["z"])
    i, f, o = sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"])
    c = f * state.c + i * z
    h = o * np.tanh(c)
    for name, arr in (("c", c), ("h", h)):
        idx = first_nonfinite(arr)
        if idx is not None:
            raise NonFiniteStateError(f"non-finite LSTM {name} state", 0, name, idx)
    return LstmState(c, h)


def lstm_forward(params: VanillaLstmParams, x_seq: Tensor, state0: LstmState | None = None):
    """Returns (h_seq, c_seq, final_state) for a (T, d_in) or (B, T, d_in) input."""
    squeeze = x_seq.ndim == 2
    x = x_seq[None] if squeeze else x_seq
    state = state0 or LstmState.zeros(params.d, x.shape[0])
    hs, cs = [], []
    for t in range(x.shape[1]):
        state = lstm_step(params, state, x[:, t])
        hs.append(state.h)
        cs.append(state.c)
    h = np.stack(hs, axis=1)
    c = np.stack(cs, axis=1)
    if squeeze:
        return h[0], c[0], LstmState(state.c[0], state.h[0])
    return h, c, state
