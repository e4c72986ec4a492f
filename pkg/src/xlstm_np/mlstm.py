"""mLSTM: matrix memory with covariance update, recurrent and parallel forms.

Per-head tensors use the layout (B, heads, T, dh). ``k`` always enters the
core unscaled; the 1/sqrt(dh) key scaling is applied inside, which keeps the
recurrent and parallel paths identical term for term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    NonFiniteStateError,
    NumericOverflowError,
    Tensor,
    first_nonfinite,
    linear,
    linear_backward,
    log_sigmoid,
    sigmoid,
    trunc_normal,
)
from .params import ParamSet
from .slstm import forget_bias_init

NEG_SENTINEL = -1e30


@dataclass(frozen=True)
class MLstmConfig:
    d_in: int
    d: int
    num_heads: int = 4
    forget_activation: str = "sigmoid"
    output_gate: bool = True
    qkv_bias: bool = True
    threshold: float = 1.0

    def __post_init__(self):
        if self.d % self.num_heads:
            raise ValueError(f"d={self.d} not divisible by num_heads={self.num_heads}")
        if self.forget_activation not in ("sigmoid", "exp"):
            raise ValueError(f"forget_activation must be sigmoid or exp, got {self.forget_activation!r}")

    @property
    def head_dim(self) -> int:
        return self.d // self.num_heads

    @property
    def key_scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)


@dataclass
class MLstmParams(ParamSet):
    cfg: MLstmConfig
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    w_i: Tensor
    w_f: Tensor
    b_i: Tensor
    b_f: Tensor
    b_q: Tensor | None = None
    b_k: Tensor | None = None
    b_v: Tensor | None = None
    W_o: Tensor | None = None
    b_o: Tensor | None = None


def init_mlstm(cfg: MLstmConfig, rng: np.random.Generator) -> MLstmParams:
    std = np.sqrt(0.4 / cfg.d_in)
    p = dict(
        W_q=trunc_normal(rng, (cfg.d, cfg.d_in), std),
        W_k=trunc_normal(rng, (cfg.d, cfg.d_in), std),
        W_v=trunc_normal(rng, (cfg.d, cfg.d_in), std),
        w_i=trunc_normal(rng, (cfg.num_heads, cfg.d_in), std),
        w_f=trunc_normal(rng, (cfg.num_heads, cfg.d_in), std),
        b_i=rng.normal(0.0, 0.1, cfg.num_heads),
        b_f=forget_bias_init(cfg.num_heads),
    )
    if cfg.qkv_bias:
        p.update(b_q=np.zeros(cfg.d), b_k=np.zeros(cfg.d), b_v=np.zeros(cfg.d))
    if cfg.output_gate:
        p.update(W_o=trunc_normal(rng, (cfg.d, cfg.d_in), std), b_o=np.zeros(cfg.d))
    return MLstmParams(cfg=cfg, **p)


@dataclass
class MLstmHeadState:
    """C: (..., heads, dh, dh) with C[a, b] pairing value a with key b; n: (..., heads, dh); m: (..., heads)."""
    C: Tensor
    n: Tensor
    m: Tensor

    @classmethod
    def zeros(cls, num_heads: int, head_dim: int, batch: int | None = None, dtype=np.float64):
        lead = () if batch is None else (batch,)
        return cls(np.zeros((*lead, num_heads, head_dim, head_dim), dtype),
                   np.zeros((*lead, num_heads, head_dim), dtype),
                   np.zeros((*lead, num_heads), dtype))


def _log_forget(fpre: Tensor, kind: str) -> Tensor:
    return fpre if kind == "exp" else log_sigmoid(fpre)


def _dlog_forget(fpre: Tensor, kind: str) -> Tensor:
    return np.ones_like(fpre) if kind == "exp" else sigmoid(-fpre)


# --------------------------------------------------------------------------
# projections shared by both forms
# --------------------------------------------------------------------------

def _split_heads(x: Tensor, nh: int) -> Tensor:
    B, T, d = x.shape
    return x.reshape(B, T, nh, d // nh).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    B, nh, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, nh * dh)


def _project(params: MLstmParams, x: Tensor):
    cfg = params.cfg
    nh = cfg.num_heads
    q = _split_heads(linear(x, params.W_q, params.b_q), nh)
    k = _split_heads(linear(x, params.W_k, params.b_k), nh)
    v = _split_heads(linear(x, params.W_v, params.b_v), nh)
    ipre = linear(x, params.w_i, params.b_i).transpose(0, 2, 1)
    fpre = linear(x, params.w_f, params.b_f).transpose(0, 2, 1)
    opre = linear(x, params.W_o, params.b_o) if cfg.output_gate else None
    return q, k, v, ipre, fpre, opre


def _project_backward(params: MLstmParams, x: Tensor, dq, dk, dv, dipre, dfpre, dopre):
    cfg = params.cfg
    grads = {}
    dx = np.zeros_like(x)
    for name, g in (("q", dq), ("k", dk), ("v", dv)):
        gx, gW, gb = linear_backward(x, getattr(params, "W_" + name), _merge_heads(g), bias=cfg.qkv_bias)
        dx += gx
        grads["W_" + name] = gW
        if cfg.qkv_bias:
            grads["b_" + name] = gb
    for name, g in (("i", dipre), ("f", dfpre)):
        gx, gW, gb = linear_backward(x, getattr(params, "w_" + name), g.transpose(0, 2, 1))
        dx += gx
        grads["w_" + name] = gW
        grads["b_" + name] = gb
    if cfg.output_gate:
        gx, gW, gb = linear_backward(x, params.W_o, dopre)
        dx += gx
        grads["W_o"] = gW
        grads["b_o"] = gb
    return MLstmParams(cfg=cfg, **grads), dx


@dataclass
class MLstmCache:
    x: Tensor | None
    q: Tensor
    k: Tensor
    v: Tensor
    ipre: Tensor
    fpre: Tensor
    opre: Tensor | None
    htilde: Tensor          # (B, T, d), before the output gate
    core: dict
    squeeze: bool = False


def _apply_output_gate(cfg, htilde, opre):
    return sigmoid(opre) * htilde if cfg.output_gate else htilde


def _output_gate_backward(cfg, htilde, opre, dh):
    if not cfg.output_gate:
        return dh, None
    o = sigmoid(opre)
    return o * dh, dh * htilde * o * (1.0 - o)


def _as_batch(x_seq: Tensor):
    if x_seq.ndim not in (2, 3) or x_seq.shape[-2] < 1:
        raise ValueError(f"expected (T, d_in) or (B, T, d_in) with T >= 1, got {x_seq.shape}")
    return (x_seq[None], True) if x_seq.ndim == 2 else (x_seq, False)


# --------------------------------------------------------------------------
# recurrent form
# --------------------------------------------------------------------------

def _core_step(q, k, v, ipre, fpre, C, n, m, scale, kind, threshold):
    """One stabilized matrix-memory update for all heads. q/k/v: (B, nh, dh)."""
    log_f = _log_forget(fpre, kind)
    m_new = np.maximum(log_f + m, ipre)
    fp = np.exp(log_f + m - m_new)
    ip = np.exp(ipre - m_new)
    ks = k * scale
    C = fp[..., None, None] * C + ip[..., None, None] * (v[..., :, None] * ks[..., None, :])
    n = fp[..., None] * n + ip[..., None] * ks
    a = np.einsum("bhd,bhd->bh", n, q)
    den = np.maximum(np.abs(a), threshold * np.exp(-m_new))
    htilde = np.einsum("bhij,bhj->bhi", C, q) / den[..., None]
    return htilde, C, n, m_new, fp, ip, a, den


def mlstm_recurrent_core(q, k, v, ipre, fpre, kind="sigmoid", threshold=1.0,
                         state0: MLstmHeadState | None = None):
    """Sequential evaluation over (B, nh, T, dh) inputs. Returns (htilde, core_cache, final_state)."""
    B, nh, T, dh = q.shape
    scale = 1.0 / math.sqrt(dh)
    if state0 is None:
        state0 = MLstmHeadState.zeros(nh, dh, B, q.dtype)
    C, n, m = state0.C, state0.n, state0.m
    Cs = np.empty((B, nh, T, dh, dh), q.dtype)
    ns = np.empty((B, nh, T, dh), q.dtype)
    H = np.empty((B, nh, T, dh), q.dtype)
    ms, fps, ips, As, dens = (np.empty((B, nh, T), q.dtype) for _ in range(5))
    for t in range(T):
        h, C, n, m, fp, ip, a, den = _core_step(
            q[:, :, t], k[:, :, t], v[:, :, t], ipre[:, :, t], fpre[:, :, t], C, n, m, scale, kind, threshold)
        Cs[:, :, t], ns[:, :, t], H[:, :, t] = C, n, h
        ms[:, :, t], fps[:, :, t], ips[:, :, t], As[:, :, t], dens[:, :, t] = m, fp, ip, a, den
    for name, arr in (("C", Cs), ("n", ns), ("m", ms), ("h", H)):
        idx = first_nonfinite(arr)
        if idx is not None:
            raise NonFiniteStateError(f"non-finite mLSTM {name} state at timestep {idx[2]}", idx[2], name, idx)
    cache = dict(C=Cs, n=ns, m=ms, fp=fps, ip=ips, a=As, den=dens, H=H, state0=state0,
                 kind=kind, threshold=threshold)
    return H, cache, MLstmHeadState(C, n, m)


def omega(z: Tensor, threshold: float = 1.0) -> Tensor:
    """Theta(z - thr) - Theta(-z - thr): the derivative of max(|z|, thr) w.r.t. z."""
    return (z > threshold).astype(float) - (z < -threshold).astype(float)


def mlstm_recurrent_core_backward(q, k, v, ipre, fpre, cache, dH):
    """Backward recurrence. Returns (dq, dk, dv, dipre, dfpre) in core layout."""
    B, nh, T, dh = q.shape
    scale = 1.0 / math.sqrt(dh)
    Cs, ns, H = cache["C"], cache["n"], cache["H"]
    fps, ips, As, dens, ms = cache["fp"], cache["ip"], cache["a"], cache["den"], cache["m"]
    dlogf = _dlog_forget(fpre, cache["kind"])
    thr = cache["threshold"]
    st0 = cache["state0"]
    dq, dk, dv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
    dipre, dfpre = np.zeros_like(ipre), np.zeros_like(fpre)
    dC = np.zeros((B, nh, dh, dh), q.dtype)
    dn = np.zeros((B, nh, dh), q.dtype)
    for t in range(T - 1, -1, -1):
        qt, kst, vt = q[:, :, t], k[:, :, t] * scale, v[:, :, t]
        g = dH[:, :, t]
        den = dens[:, :, t]
        # the Omega factor, written in the stabilized representation
        active = np.abs(As[:, :, t]) > thr * np.exp(-ms[:, :, t])
        om = np.sign(As[:, :, t]) * active
        dden = -np.einsum("bhi,bhi->bh", g, H[:, :, t]) / den
        da = dden * om
        dC = dC + g[..., :, None] * qt[..., None, :] / den[..., None, None]
        dn = dn + da[..., None] * qt
        dq[:, :, t] = np.einsum("bhij,bhi->bhj", Cs[:, :, t], g) / den[..., None] + da[..., None] * ns[:, :, t]
        ip, fp = ips[:, :, t], fps[:, :, t]
        dv[:, :, t] = ip[..., None] * np.einsum("bhij,bhj->bhi", dC, kst)
        dks = ip[..., None] * (np.einsum("bhij,bhi->bhj", dC, vt) + dn)
        dk[:, :, t] = dks * scale
        dipre[:, :, t] = ip * (np.einsum("bhi,bhij,bhj->bh", vt, dC, kst) + np.einsum("bhj,bhj->bh", kst, dn))
        C_prev = Cs[:, :, t - 1] if t > 0 else st0.C
        n_prev = ns[:, :, t - 1] if t > 0 else st0.n
        dfpre[:, :, t] = fp * (np.einsum("bhij,bhij->bh", C_prev, dC) + np.einsum("bhj,bhj->bh", n_prev, dn)) \
            * dlogf[:, :, t]
        dC = fp[..., None, None] * dC
        dn = fp[..., None] * dn
    return dq, dk, dv, dipre, dfpre


def mlstm_step(params: MLstmParams, state: MLstmHeadState, x: Tensor):
    """One recurrent step; ``x`` is (d_in,) or (B, d_in). Returns (new_state, h)."""
    cfg = params.cfg
    single = x.ndim == 1
    xb = (x[None] if single else x)[:, None, :]
    q, k, v, ipre, fpre, opre = _project(params, xb)
    st = state if not single else MLstmHeadState(state.C[None], state.n[None], state.m[None])
    ht, C, n, m, *_ = _core_step(q[:, :, 0], k[:, :, 0], v[:, :, 0], ipre[:, :, 0], fpre[:, :, 0],
                                 st.C, st.n, st.m, cfg.key_scale, cfg.forget_activation, cfg.threshold)
    for name, arr in (("C", C), ("n", n), ("m", m), ("h", ht)):
        idx = first_nonfinite(arr)
        if idx is not None:
            raise NonFiniteStateError(f"non-finite mLSTM {name} state", 0, name, idx)
    htilde = ht.reshape(ht.shape[0], -1)
    h = _apply_output_gate(cfg, htilde, None if opre is None else opre[:, 0])
    if single:
        return MLstmHeadState(C[0], n[0], m[0]), h[0]
    return MLstmHeadState(C, n, m), h


def mlstm_recurrent_forward(params: MLstmParams, x_seq: Tensor, state0: MLstmHeadState | None = None):
    """Returns (h_seq, cache, final_state)."""
    cfg = params.cfg
    x, squeeze = _as_batch(x_seq)
    q, k, v, ipre, fpre, opre = _project(params, x)
    H, core, final = mlstm_recurrent_core(q, k, v, ipre, fpre, cfg.forget_activation, cfg.threshold, state0)
    htilde = _merge_heads(H)
    h = _apply_output_gate(cfg, htilde, opre)
    cache = MLstmCache(x, q, k, v, ipre, fpre, opre, htilde, core, squeeze)
    return (h[0] if squeeze else h), cache, final


def mlstm_recurrent_backward(params: MLstmParams, cache: MLstmCache, upstream: Tensor):
    """Returns (grads: MLstmParams, dx)."""
    if "C" not in cache.core:
        raise ValueError("cache was not produced by the recurrent forward")
    dh = upstream[None] if cache.squeeze else upstream
    if dh.shape != cache.htilde.shape:
        raise ValueError(f"upstream shape {dh.shape} does not match cache {cache.htilde.shape}")
    dht, dopre = _output_gate_backward(params.cfg, cache.htilde, cache.opre, dh)
    dq, dk, dv, di, df = mlstm_recurrent_core_backward(
        cache.q, cache.k, cache.v, cache.ipre, cache.fpre, cache.core,
        _split_heads(dht, params.cfg.num_heads))
    grads, dx = _project_backward(params, cache.x, dq, dk, dv, di, df, dopre)
    return grads, (dx[0] if cache.squeeze else dx)


# --------------------------------------------------------------------------
# parallel form
# --------------------------------------------------------------------------

@dataclass
class GateMatrices:
    """Log-forget, input and combined gate matrices for one or more heads (..., T, T)."""
    Fbar: Tensor
    Itilde: Tensor
    Dtilde: Tensor
    m: Tensor
    Dprime: Tensor


def gate_matrices(ipre: Tensor, fpre: Tensor, kind: str = "sigmoid") -> GateMatrices:
    """Build the stabilized gate matrices from (..., T) pre-activations."""
    T = ipre.shape[-1]
    log_f = _log_forget(fpre, kind)
    L = np.cumsum(log_f, axis=-1)
    lower = np.tril(np.ones((T, T), dtype=bool))
    Fbar = np.where(lower, L[..., :, None] - L[..., None, :], NEG_SENTINEL)
    Itilde = np.where(lower, ipre[..., None, :], 0.0)
    Dtilde = Fbar + Itilde
    m = Dtilde.max(axis=-1)
    Dprime = np.exp(Dtilde - m[..., None])
    return GateMatrices(Fbar, Itilde, Dtilde, m, Dprime)


def forget_matrix(fpre: Tensor, kind: str = "sigmoid") -> Tensor:
    """Unstabilized F with F_ii = 1, F_ij = prod_{k=j+1..i} f_k below the diagonal, 0 above."""
    T = fpre.shape[-1]
    f = np.exp(fpre) if kind == "exp" else sigmoid(fpre)
    F = np.zeros((*fpre.shape[:-1], T, T))
    for i in range(T):
        for j in range(i + 1):
            F[..., i, j] = np.prod(f[..., j + 1:i + 1], axis=-1)
    return F


def mlstm_parallel_core(q, k, v, ipre, fpre, kind="sigmoid", threshold=1.0):
    """Whole-sequence evaluation with materialized T x T matrices."""
    dh = q.shape[-1]
    scale = 1.0 / math.sqrt(dh)
    gm = gate_matrices(ipre, fpre, kind)
    S = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    Ct = S * gm.Dprime
    b = Ct.sum(axis=-1)
    nrm = np.maximum(np.abs(b), threshold * np.exp(-gm.m))
    Cn = Ct / nrm[..., None]
    H = np.matmul(Cn, v)
    for stage, arr in (("D'", gm.Dprime), ("C~'", Ct), ("n", nrm), ("H~", H)):
        idx = first_nonfinite(arr)
        if idx is not None:
            raise NumericOverflowError(f"non-finite value in parallel mLSTM stage {stage} at {idx}", idx)
    cache = dict(gm=gm, S=S, Ct=Ct, b=b, nrm=nrm, Cn=Cn, kind=kind, threshold=threshold)
    return H, cache


def forget_grad_double_sum(dDtilde: Tensor) -> Tensor:
    """d/d fbar_k = sum_{j<k} sum_{i>=k} dDtilde[i, j] for every k, over trailing (T, T)."""
    T = dDtilde.shape[-1]
    P = np.cumsum(dDtilde, axis=-1)
    A = np.zeros_like(dDtilde)
    A[..., :, 1:] = P[..., :, :-1]          # A[i, k] = sum_{j<k} dD[i, j]
    A = A * np.tril(np.ones((T, T), dtype=A.dtype))   # keep i >= k
    return A.sum(axis=-2)


def mlstm_parallel_core_backward(q, k, v, ipre, fpre, cache, dH):
    """Returns (dq, dk, dv, dipre, dfpre)."""
    dh = q.shape[-1]
    scale = 1.0 / math.sqrt(dh)
    gm, S, Ct, b, nrm, Cn = (cache[key] for key in ("gm", "S", "Ct", "b", "nrm", "Cn"))
    dCn = np.matmul(dH, np.swapaxes(v, -1, -2))
    dv = np.matmul(np.swapaxes(Cn, -1, -2), dH)
    dnrm = -(Ct * dCn).sum(axis=-1) / (nrm * nrm)
    active = np.abs(b) > cache["threshold"] * np.exp(-gm.m)
    db = np.sign(b) * dnrm * active
    dCt = dCn / nrm[..., None] + db[..., None]
    dS = dCt * gm.Dprime
    dDtilde = gm.Dprime * (dCt * S)
    dq = np.matmul(dS, k) * scale
    dk = np.matmul(np.swapaxes(dS, -1, -2), q) * scale
    dipre = dDtilde.sum(axis=-2)             # column sums; zero above the diagonal
    dfpre = forget_grad_double_sum(dDtilde) * _dlog_forget(fpre, cache["kind"])
    return dq, dk, dv, dipre, dfpre


def mlstm_parallel_forward(params: MLstmParams, x_seq: Tensor):
    """Returns (h_seq, cache). Zero initial state."""
    cfg = params.cfg
    x, squeeze = _as_batch(x_seq)
    q, k, v, ipre, fpre, opre = _project(params, x)
    H, core = mlstm_parallel_core(q, k, v, ipre, fpre, cfg.forget_activation, cfg.threshold)
    htilde = _merge_heads(H)
    h = _apply_output_gate(cfg, htilde, opre)
    cache = MLstmCache(x, q, k, v, ipre, fpre, opre, htilde, core, squeeze)
    return (h[0] if squeeze else h), cache


def mlstm_parallel_backward(params: MLstmParams, cache: MLstmCache, upstream: Tensor):
    """Returns (grads: MLstmParams, dx)."""
    if "gm" not in cache.core:
        raise ValueError("cache was not produced by the parallel forward")
    dh = upstream[None] if cache.squeeze else upstream
    if dh.shape != cache.htilde.shape:
        raise ValueError(f"upstream shape {dh.shape} does not match cache {cache.htilde.shape}")
    dht, dopre = _output_gate_backward(params.cfg, cache.htilde, cache.opre, dh)
    dq, dk, dv, di, df = mlstm_parallel_core_backward(
        cache.q, cache.k, cache.v, cache.ipre, cache.fpre, cache.core,
        _split_heads(dht, params.cfg.num_heads))
    grads, dx = _project_backward(params, cache.x, dq, dk, dv, di, df, dopre)
    return grads, (dx[0] if cache.squeeze else dx)


# --------------------------------------------------------------------------
# independent reference: direct unstabilized recurrence
# --------------------------------------------------------------------------

def mlstm_forward_unstabilized(params: MLstmParams, x_seq: Tensor):
    """Plain C_t = f C + i v k^T recurrence, h~ = C q / max(|n^T q|, thr).

    Single sequence (T, d_in); returns (h (T, d), C_final (heads, dh, dh)).
    """
    cfg = params.cfg
    nh, dh = cfg.num_heads, cfg.head_dim
    T = x_seq.shape[0]
    C = np.zeros((nh, dh, dh))
    n = np.zeros((nh, dh))
    out = np.zeros((T, cfg.d))
    for t in range(T):
        x = x_seq[t]
        q = params.W_q @ x + (params.b_q if params.b_q is not None else 0.0)
        k = (params.W_k @ x + (params.b_k if params.b_k is not None else 0.0)) / np.sqrt(dh)
        v = params.W_v @ x + (params.b_v if params.b_v is not None else 0.0)
        i = np.exp(params.w_i @ x + params.b_i)
        fpre = params.w_f @ x + params.b_f
        f = np.exp(fpre) if cfg.forget_activation == "exp" else 1.0 / (1.0 + np.exp(-fpre))
        for hd in range(nh):
            sl = slice(hd * dh, (hd + 1) * dh)
            C[hd] = f[hd] * C[hd] + i[hd] * np.outer(v[sl], k[sl])
            n[hd] = f[hd] * n[hd] + i[hd] * k[sl]
            den = max(abs(float(n[hd] @ q[sl])), cfg.threshold)
            out[t, sl] = C[hd] @ q[sl] / den
        if cfg.output_gate:
            out[t] *= 1.0 / (1.0 + np.exp(-(params.W_o @ x + params.b_o)))
    return out, C
