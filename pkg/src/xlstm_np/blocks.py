"""Residual xLSTM blocks and the stacked xLSTM[a:b] model.

sLSTM blocks use post up-projection (cell in model width, gated MLP after);
mLSTM blocks use pre up-projection (expand first, mix inside the wide space).
Both sit in a pre-LayerNorm residual: y = x + block(LN(x)).
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .mlstm import (
    _merge_heads,
    _split_heads,
    mlstm_parallel_core,
    mlstm_parallel_core_backward,
    mlstm_recurrent_core,
    mlstm_recurrent_core_backward,
)
from .numerics import Tensor, trunc_normal
from .params import ParamSet
from .slstm import (
    GATES,
    SLstmConfig,
    SLstmParams,
    forget_bias_init,
    init_slstm,
    slstm_recurrence,
    slstm_recurrence_backward,
)


@dataclass(frozen=True)
class StackConfig:
    """Model shape and block options.

    ``ratio`` is (mLSTM, sLSTM). ``slstm_positions`` overrides the ratio rule.
    Setting ``input_dim`` switches the token embedding for a linear input map
    over real-valued rows; ``output_dim`` defaults to ``vocab_size``.
    """
    vocab_size: int = 11
    embedding_dim: int = 16
    num_blocks: int = 2
    ratio: tuple[int, int] = (1, 1)
    slstm_positions: tuple[int, ...] | None = None
    tie_weights: bool = False
    input_dim: int | None = None
    output_dim: int | None = None
    num_heads: int = 4
    conv_kernel: int = 4
    # sLSTM block
    slstm_conv: bool = True
    slstm_forget_activation: str = "sigmoid"
    slstm_block_diag_input: bool = False
    slstm_clip: float | None = 10.0
    mlp_factor: float = 4.0 / 3.0
    mlp_value_activation: str = "gelu"
    mlp_gate_activation: str = "swish"
    # mLSTM block
    mlstm_proj_factor: float = 2.0
    mlstm_qkv_blocksize: int = 4
    mlstm_conv: bool = True
    mlstm_forget_activation: str = "sigmoid"
    mlstm_gate_activation: str = "sigmoid"
    mlstm_mode: str = "parallel"
    groupnorm_affine: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if isinstance(self.ratio, list):
            object.__setattr__(self, "ratio", tuple(self.ratio))
        if isinstance(self.slstm_positions, list):
            object.__setattr__(self, "slstm_positions", tuple(self.slstm_positions))
        a, b = self.ratio
        if a < 0 or b < 0 or a + b == 0:
            raise ValueError(f"invalid ratio {self.ratio}")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.slstm_positions is not None:
            pos = self.slstm_positions
            if len(set(pos)) != len(pos) or any(p < 0 or p >= self.num_blocks for p in pos):
                raise ValueError(f"slstm_positions {pos} must be unique and within [0, {self.num_blocks})")
        if self.embedding_dim % self.num_heads:
            raise ValueError("embedding_dim must be divisible by num_heads")
        if self.mlstm_inner_dim % self.num_heads or self.mlstm_inner_dim % self.mlstm_qkv_blocksize:
            raise ValueError("mLSTM inner width must be divisible by num_heads and the q/k/v block size")
        if self.tie_weights and (self.input_dim is not None or self.out_dim != self.vocab_size):
            raise ValueError("weight tying needs token inputs and vocabulary outputs")
        if self.mlstm_mode not in ("parallel", "recurrent"):
            raise ValueError(f"mlstm_mode must be parallel or recurrent, got {self.mlstm_mode!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def out_dim(self) -> int:
        return self.vocab_size if self.output_dim is None else self.output_dim

    @property
    def mlp_dim(self) -> int:
        return math.ceil(self.mlp_factor * self.embedding_dim)

    @property
    def mlstm_inner_dim(self) -> int:
        return int(round(self.mlstm_proj_factor * self.embedding_dim))

    def layout(self) -> list[str]:
        """Block kinds in order: 'm' for mLSTM, 's' for sLSTM."""
        pos = set(slstm_positions(self))
        return ["s" if i in pos else "m" for i in range(self.num_blocks)]


def slstm_positions(cfg: StackConfig) -> list[int]:
    """sLSTM block indices for a stack.

    Without explicit positions: floor(N*b/(a+b)) sLSTM blocks spread evenly
    over the tail that follows the first floor(N*a/(a+b)) blocks.
    """
    if cfg.slstm_positions is not None:
        return sorted(cfg.slstm_positions)
    a, b = cfg.ratio
    N = cfg.num_blocks
    count = (N * b) // (a + b)
    if count == 0:
        return []
    start = (N * a) // (a + b)
    span = N - start
    return [start + (k * span) // count for k in range(count)]


# --------------------------------------------------------------------------
# parameter containers
# --------------------------------------------------------------------------

@dataclass
class SLstmBlockParams(ParamSet):
    ln_g: Tensor
    ln_b: Tensor
    cell: SLstmParams
    up_W: Tensor              # (2 * mlp_dim, d): value branch rows first, then gate branch
    down_W: Tensor            # (d, mlp_dim)
    conv_k: Tensor | None = None
    conv_b: Tensor | None = None
    gn_g: Tensor | None = None
    gn_b: Tensor | None = None
    kind: str = "s"


@dataclass
class MLstmBlockParams(ParamSet):
    ln_g: Tensor
    ln_b: Tensor
    up_W: Tensor              # (2 * inner, d): cell branch rows first, then external gate branch
    q_W: Tensor               # block-diagonal (inner/bs, bs, bs)
    k_W: Tensor
    v_W: Tensor
    w_i: Tensor               # (heads, 2 * inner) over [conv branch, raw branch]
    w_f: Tensor
    b_i: Tensor
    b_f: Tensor
    skip: Tensor              # (inner,)
    down_W: Tensor            # (d, inner)
    conv_k: Tensor | None = None
    conv_b: Tensor | None = None
    gn_g: Tensor | None = None
    gn_b: Tensor | None = None
    kind: str = "m"


@dataclass
class ModelParams(ParamSet):
    cfg: StackConfig
    blocks: list = field(default_factory=list)
    ln_g: Tensor | None = None
    ln_b: Tensor | None = None
    embed: Tensor | None = None     # (V, d) for token inputs
    in_W: Tensor | None = None      # (d, input_dim) for real-valued inputs
    in_b: Tensor | None = None
    head: Tensor | None = None      # (out_dim, d); None when tied to ``embed``


def _slstm_cell_config(cfg: StackConfig) -> SLstmConfig:
    d = cfg.embedding_dim
    return SLstmConfig(d_in=d, d=d, num_heads=cfg.num_heads, forget_activation=cfg.slstm_forget_activation,
                       block_diag_input=cfg.slstm_block_diag_input, clip=cfg.slstm_clip)


def init_slstm_block(cfg: StackConfig, rng: np.random.Generator) -> SLstmBlockParams:
    d, ff = cfg.embedding_dim, cfg.mlp_dim
    p = SLstmBlockParams(
        ln_g=np.ones(d), ln_b=np.zeros(d),
        cell=init_slstm(_slstm_cell_config(cfg), rng),
        up_W=trunc_normal(rng, (2 * ff, d), np.sqrt(0.4 / d)),
        down_W=trunc_normal(rng, (d, ff), np.sqrt(0.4 / ff)),
    )
    if cfg.slstm_conv:
        p.conv_k = trunc_normal(rng, (cfg.conv_kernel, d), np.sqrt(1.0 / cfg.conv_kernel))
        p.conv_b = np.zeros(d)
    if cfg.groupnorm_affine:
        p.gn_g, p.gn_b = np.ones(d), np.zeros(d)
    return p


def init_mlstm_block(cfg: StackConfig, rng: np.random.Generator) -> MLstmBlockParams:
    d, di, bs, nh = cfg.embedding_dim, cfg.mlstm_inner_dim, cfg.mlstm_qkv_blocksize, cfg.num_heads
    p = MLstmBlockParams(
        ln_g=np.ones(d), ln_b=np.zeros(d),
        up_W=trunc_normal(rng, (2 * di, d), np.sqrt(0.4 / d)),
        q_W=trunc_normal(rng, (di // bs, bs, bs), np.sqrt(0.4 / bs)),
        k_W=trunc_normal(rng, (di // bs, bs, bs), np.sqrt(0.4 / bs)),
        v_W=trunc_normal(rng, (di // bs, bs, bs), np.sqrt(0.4 / bs)),
        w_i=trunc_normal(rng, (nh, 2 * di), np.sqrt(0.4 / (2 * di))),
        w_f=trunc_normal(rng, (nh, 2 * di), np.sqrt(0.4 / (2 * di))),
        b_i=rng.normal(0.0, 0.1, nh),
        b_f=forget_bias_init(nh),
        skip=np.ones(di),
        down_W=trunc_normal(rng, (d, di), np.sqrt(0.4 / di)),
    )
    if cfg.mlstm_conv:
        p.conv_k = trunc_normal(rng, (cfg.conv_kernel, di), np.sqrt(1.0 / cfg.conv_kernel))
        p.conv_b = np.zeros(di)
    if cfg.groupnorm_affine:
        p.gn_g, p.gn_b = np.ones(di), np.zeros(di)
    return p


def init_model(cfg: StackConfig, rng: np.random.Generator) -> ModelParams:
    d = cfg.embedding_dim
    blocks = [init_slstm_block(cfg, rng) if kind == "s" else init_mlstm_block(cfg, rng)
              for kind in cfg.layout()]
    model = ModelParams(cfg=cfg, blocks=blocks, ln_g=np.ones(d), ln_b=np.zeros(d))
    if cfg.input_dim is None:
        model.embed = rng.normal(0.0, 0.02, (cfg.vocab_size, d))
    else:
        model.in_W = trunc_normal(rng, (d, cfg.input_dim), np.sqrt(1.0 / cfg.input_dim))
        model.in_b = np.zeros(d)
    if not cfg.tie_weights:
        model.head = trunc_normal(rng, (cfg.out_dim, d), np.sqrt(0.4 / d))
    if cfg.dtype == "float32":
        model = model.astype(np.float32)
    return model


# --------------------------------------------------------------------------
# parameter counting by formula
# --------------------------------------------------------------------------

def slstm_block_param_count(cfg: StackConfig) -> int:
    d, ff, nh = cfg.embedding_dim, cfg.mlp_dim, cfg.num_heads
    w_in = 4 * (d * d // nh if cfg.slstm_block_diag_input else d * d)
    n = 2 * d + w_in + 4 * (d * d // nh) + 4 * d + 2 * ff * d + d * ff
    if cfg.slstm_conv:
        n += cfg.conv_kernel * d + d
    if cfg.groupnorm_affine:
        n += 2 * d
    return n


def mlstm_block_param_count(cfg: StackConfig) -> int:
    d, di, bs, nh = cfg.embedding_dim, cfg.mlstm_inner_dim, cfg.mlstm_qkv_blocksize, cfg.num_heads
    n = 2 * d + 2 * di * d + 3 * di * bs + 2 * nh * 2 * di + 2 * nh + di + d * di
    if cfg.mlstm_conv:
        n += cfg.conv_kernel * di + di
    if cfg.groupnorm_affine:
        n += 2 * di
    return n


def count_params(cfg: StackConfig) -> int:
    """Parameter count from the config alone (no allocation)."""
    d = cfg.embedding_dim
    n = sum(slstm_block_param_count(cfg) if k == "s" else mlstm_block_param_count(cfg) for k in cfg.layout())
    n += 2 * d
    n += cfg.vocab_size * d if cfg.input_dim is None else d * cfg.input_dim + d
    if not cfg.tie_weights:
        n += cfg.out_dim * d
    return n


# --------------------------------------------------------------------------
# sLSTM block
# --------------------------------------------------------------------------

def _split_last(x, n):
    return x[..., :n], x[..., n:]


def slstm_block_forward(p: SLstmBlockParams, x: Tensor, cfg: StackConfig):
    """(B, T, d) -> (B, T, d), cache."""
    c = {}
    xn, c["ln"] = nx.layer_norm(x, p.ln_g, p.ln_b)
    if p.conv_k is not None:
        c["conv_pre"] = nx.causal_conv1d(xn, p.conv_k, p.conv_b)
        xc = nx.activation(c["conv_pre"], "swish")
    else:
        xc = xn
    cell = p.cell
    heads = cell.cfg.num_heads if cell.cfg.block_diag_input else None
    src = {"z": xn, "i": xc, "f": xc, "o": xn}
    wx = np.stack([nx.linear(src[g], cell.W(g), None, heads) for g in GATES], axis=-2)
    h, c["cell"], _ = slstm_recurrence(cell, wx)
    g, c["gn"] = nx.group_norm(h, cell.cfg.num_heads, p.gn_g, p.gn_b)
    u = nx.linear(g, p.up_W)
    val, gate = _split_last(u, cfg.mlp_dim)
    a = nx.activation(val, cfg.mlp_value_activation) * nx.activation(gate, cfg.mlp_gate_activation)
    y = x + nx.linear(a, p.down_W)
    c.update(xn=xn, xc=xc, g=g, val=val, gate=gate, a=a)
    return y, c


def slstm_block_backward(p: SLstmBlockParams, c: dict, dy: Tensor, cfg: StackConfig):
    """Returns (grads: SLstmBlockParams, dx)."""
    grads = {}
    da, grads["down_W"], _ = nx.linear_backward(c["a"], p.down_W, dy, bias=False)
    act_v = nx.activation(c["val"], cfg.mlp_value_activation)
    act_g = nx.activation(c["gate"], cfg.mlp_gate_activation)
    dval = nx.activation_grad(c["val"], cfg.mlp_value_activation, da * act_g)
    dgate = nx.activation_grad(c["gate"], cfg.mlp_gate_activation, da * act_v)
    du = np.concatenate([dval, dgate], axis=-1)
    dg, grads["up_W"], _ = nx.linear_backward(c["g"], p.up_W, du, bias=False)
    dh, grads["gn_g"], grads["gn_b"] = nx.group_norm_backward(c["gn"], dg)
    cell = p.cell
    dpre, dR, db = slstm_recurrence_backward(cell, c["cell"], dh)
    xn, xc = c["xn"], c["xc"]
    dxn = np.zeros_like(xn)
    dxc = np.zeros_like(xc) if p.conv_k is not None else dxn
    src = {"z": xn, "i": xc, "f": xc, "o": xn}
    cg = {}
    for k, gname in enumerate(GATES):
        dsrc, dW, _ = nx.linear_backward(src[gname], cell.W(gname), dpre[:, :, k], bias=False)
        if gname in ("i", "f"):
            dxc += dsrc
        else:
            dxn += dsrc
        cg["W_" + gname] = dW
        cg["R_" + gname] = dR[gname]
        cg["b_" + gname] = db[gname]
    grads["cell"] = SLstmParams(cfg=cell.cfg, **cg)
    if p.conv_k is not None:
        dconv = nx.activation_grad(c["conv_pre"], "swish", dxc)
        dxn_c, grads["conv_k"], grads["conv_b"] = nx.causal_conv1d_backward(xn, p.conv_k, dconv)
        dxn = dxn + dxn_c
    dx_ln, grads["ln_g"], grads["ln_b"] = nx.layer_norm_backward(c["ln"], dxn)
    return dataclasses.replace(p, **grads), dy + dx_ln


# --------------------------------------------------------------------------
# mLSTM block
# --------------------------------------------------------------------------

def mlstm_block_forward(p: MLstmBlockParams, x: Tensor, cfg: StackConfig):
    """(B, T, d) -> (B, T, d), cache."""
    c = {}
    di, nh = cfg.mlstm_inner_dim, cfg.num_heads
    xn, c["ln"] = nx.layer_norm(x, p.ln_g, p.ln_b)
    u = nx.linear(xn, p.up_W)
    xm, xg = _split_last(u, di)
    if p.conv_k is not None:
        c["conv_pre"] = nx.causal_conv1d(xm, p.conv_k, p.conv_b)
        xc = nx.activation(c["conv_pre"], "swish")
    else:
        xc = xm
    q = nx.linear(xc, p.q_W)
    k = nx.linear(xc, p.k_W)
    v = nx.linear(xm, p.v_W)
    gin = np.concatenate([xc, xm], axis=-1)
    ipre = nx.linear(gin, p.w_i, p.b_i).transpose(0, 2, 1)
    fpre = nx.linear(gin, p.w_f, p.b_f).transpose(0, 2, 1)
    qh, kh, vh = (_split_heads(a, nh) for a in (q, k, v))
    if cfg.mlstm_mode == "parallel":
        H, c["core"] = mlstm_parallel_core(qh, kh, vh, ipre, fpre, cfg.mlstm_forget_activation)
    else:
        H, c["core"], _ = mlstm_recurrent_core(qh, kh, vh, ipre, fpre, cfg.mlstm_forget_activation)
    ht = _merge_heads(H)
    g, c["gn"] = nx.group_norm(ht, nh, p.gn_g, p.gn_b)
    s = g + p.skip * xc
    og = nx.activation(xg, cfg.mlstm_gate_activation)
    a = s * og
    y = x + nx.linear(a, p.down_W)
    c.update(xn=xn, xm=xm, xg=xg, xc=xc, gin=gin, qh=qh, kh=kh, vh=vh, ipre=ipre, fpre=fpre, s=s, og=og, a=a)
    return y, c


def mlstm_block_backward(p: MLstmBlockParams, c: dict, dy: Tensor, cfg: StackConfig):
    """Returns (grads: MLstmBlockParams, dx)."""
    grads = {}
    nh = cfg.num_heads
    da, grads["down_W"], _ = nx.linear_backward(c["a"], p.down_W, dy, bias=False)
    ds = da * c["og"]
    dxg = nx.activation_grad(c["xg"], cfg.mlstm_gate_activation, da * c["s"])
    xc = c["xc"]
    grads["skip"] = (ds * xc).reshape(-1, xc.shape[-1]).sum(axis=0)
    dxc = ds * p.skip
    dht, grads["gn_g"], grads["gn_b"] = nx.group_norm_backward(c["gn"], ds)
    core_bw = mlstm_parallel_core_backward if cfg.mlstm_mode == "parallel" else mlstm_recurrent_core_backward
    dqh, dkh, dvh, dipre, dfpre = core_bw(c["qh"], c["kh"], c["vh"], c["ipre"], c["fpre"], c["core"],
                                          _split_heads(dht, nh))
    dgin_i, grads["w_i"], grads["b_i"] = nx.linear_backward(c["gin"], p.w_i, dipre.transpose(0, 2, 1))
    dgin_f, grads["w_f"], grads["b_f"] = nx.linear_backward(c["gin"], p.w_f, dfpre.transpose(0, 2, 1))
    dgin = dgin_i + dgin_f
    di = cfg.mlstm_inner_dim
    dxc = dxc + dgin[..., :di]
    dxm = dgin[..., di:].copy()
    dxc_q, grads["q_W"], _ = nx.linear_backward(xc, p.q_W, _merge_heads(dqh), bias=False)
    dxc_k, grads["k_W"], _ = nx.linear_backward(xc, p.k_W, _merge_heads(dkh), bias=False)
    dxm_v, grads["v_W"], _ = nx.linear_backward(c["xm"], p.v_W, _merge_heads(dvh), bias=False)
    dxc = dxc + dxc_q + dxc_k
    dxm += dxm_v
    if p.conv_k is not None:
        dconv = nx.activation_grad(c["conv_pre"], "swish", dxc)
        dxm_c, grads["conv_k"], grads["conv_b"] = nx.causal_conv1d_backward(c["xm"], p.conv_k, dconv)
        dxm += dxm_c
    else:
        dxm += dxc
    du = np.concatenate([dxm, dxg], axis=-1)
    dxn, grads["up_W"], _ = nx.linear_backward(c["xn"], p.up_W, du, bias=False)
    dx_ln, grads["ln_g"], grads["ln_b"] = nx.layer_norm_backward(c["ln"], dxn)
    return dataclasses.replace(p, **grads), dy + dx_ln


def block_forward(p, x, cfg):
    return slstm_block_forward(p, x, cfg) if p.kind == "s" else mlstm_block_forward(p, x, cfg)


def block_backward(p, cache, dy, cfg):
    return slstm_block_backward(p, cache, dy, cfg) if p.kind == "s" else mlstm_block_backward(p, cache, dy, cfg)


# --------------------------------------------------------------------------
# full model
# --------------------------------------------------------------------------

def model_forward(model: ModelParams, inputs: Tensor):
    """Token ids (T,) / (B, T), or real rows (T, input_dim) / (B, T, input_dim).

    Returns (outputs, caches); outputs are (…, T, out_dim) logits or
    regression values. Strictly causal, no positional encoding.
    """
    cfg = model.cfg
    if cfg.input_dim is None:
        tokens = np.asarray(inputs)
        squeeze = tokens.ndim == 1
        tokens = tokens[None] if squeeze else tokens
        if not np.issubdtype(tokens.dtype, np.integer):
            raise ValueError("token inputs must be integer ids")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
            raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
        x = model.embed[tokens]
    else:
        rows = np.asarray(inputs, dtype=model.in_W.dtype)
        squeeze = rows.ndim == 2
        rows = rows[None] if squeeze else rows
        if rows.shape[-1] != cfg.input_dim:
            raise ValueError(f"expected input rows of width {cfg.input_dim}, got {rows.shape[-1]}")
        tokens = rows
        x = nx.linear(rows, model.in_W, model.in_b)
    caches = {"inputs": tokens, "squeeze": squeeze, "blocks": []}
    for p in model.blocks:
        x, bc = block_forward(p, x, cfg)
        caches["blocks"].append(bc)
    xf, caches["ln"] = nx.layer_norm(x, model.ln_g, model.ln_b)
    caches["xf"] = xf
    head = model.embed if cfg.tie_weights else model.head
    out = nx.linear(xf, head)
    return (out[0] if squeeze else out), caches


def model_backward(model: ModelParams, caches: dict, upstream: Tensor) -> ModelParams:
    """Gradients for every parameter of ``model``."""
    cfg = model.cfg
    dout = upstream[None] if caches["squeeze"] else upstream
    head = model.embed if cfg.tie_weights else model.head
    if dout.shape != (*caches["xf"].shape[:-1], head.shape[0]):
        raise ValueError(f"upstream shape {dout.shape} does not match cached forward")
    grads = model.zeros_like()
    dxf, dhead, _ = nx.linear_backward(caches["xf"], head, dout, bias=False)
    dx, grads.ln_g, grads.ln_b = nx.layer_norm_backward(caches["ln"], dxf)
    blocks = []
    for p, bc in zip(reversed(model.blocks), reversed(caches["blocks"])):
        gp, dx = block_backward(p, bc, dx, cfg)
        blocks.append(gp)
    grads.blocks = blocks[::-1]
    if cfg.input_dim is None:
        dE = np.zeros_like(model.embed)
        np.add.at(dE, caches["inputs"].reshape(-1), dx.reshape(-1, dx.shape[-1]))
        if cfg.tie_weights:
            dE += dhead
        grads.embed = dE
    else:
        _, grads.in_W, grads.in_b = nx.linear_backward(caches["inputs"], model.in_W, dx)
    if not cfg.tie_weights:
        grads.head = dhead
    return grads


# --------------------------------------------------------------------------
# checkpoint container
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"XLSTMNP1"


def config_to_dict(cfg: StackConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["ratio"] = list(cfg.ratio)
    if cfg.slstm_positions is not None:
        d["slstm_positions"] = list(cfg.slstm_positions)
    return d


def save_checkpoint(path, model: ModelParams, extra: dict | None = None) -> None:
    """Write the binary checkpoint described in README.md."""
    header = json.dumps({"config": config_to_dict(model.cfg), "extra": extra or {}}, sort_keys=True).encode()
    arrays = model.arrays()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(arrays)))
        for name, arr in arrays.items():
            bname = name.encode()
            fh.write(struct.pack("<I", len(bname)))
            fh.write(bname)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, extra)."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an xlstm_np checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        (count,) = struct.unpack("<Q", fh.read(8))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            size = int(np.prod(shape))
            tensors[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
    cfg = StackConfig(**header["config"])
    model = init_model(cfg, nx.make_rng(0))
    slots = model.arrays()
    if set(slots) != set(tensors):
        raise ValueError(f"{path}: parameter names do not match the stored config")
    for name, arr in slots.items():
        if arr.shape != tensors[name].shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        arr[...] = tensors[name]
    return model, header.get("extra", {})
