import dataclasses
import math

import numpy as np
import pytest

from xlstm_np.blocks import (StackConfig, count_params, init_mlstm_block, init_model, init_slstm_block,
                             load_checkpoint, mlstm_block_forward, model_backward, model_forward,
                             save_checkpoint, slstm_block_forward, slstm_positions)
from xlstm_np.numerics import make_rng
from xlstm_np.training import ScheduleConfig, adamw_step, init_optimizer, lr_at, masked_cross_entropy
from xlstm_np.verify import model_gradcheck

TINY = dict(vocab_size=11, embedding_dim=16, num_blocks=2)


def test_ratio_layout():
    assert StackConfig(ratio=(1, 1), **TINY).layout() == ["m", "s"]
    assert StackConfig(ratio=(1, 0), **TINY).layout() == ["m", "m"]
    assert StackConfig(ratio=(0, 1), **TINY).layout() == ["s", "s"]
    cfg = StackConfig(ratio=(7, 1), vocab_size=11, embedding_dim=16, num_blocks=48)
    assert slstm_positions(cfg) == [42, 43, 44, 45, 46, 47]
    explicit = StackConfig(ratio=(7, 1), vocab_size=11, embedding_dim=16, num_blocks=48,
                           slstm_positions=(3, 5, 7, 40, 42, 44))
    assert slstm_positions(explicit) == [3, 5, 7, 40, 42, 44]
    assert StackConfig(ratio=(3, 1), **{**TINY, "num_blocks": 8}).layout() == ["m"] * 6 + ["s", "s"]


def test_layout_is_deterministic():
    cfg = StackConfig(ratio=(2, 3), **{**TINY, "num_blocks": 11})
    assert cfg.layout() == StackConfig(ratio=(2, 3), **{**TINY, "num_blocks": 11}).layout()
    assert cfg.layout().count("s") == 11 * 3 // 5


def test_config_validation():
    with pytest.raises(ValueError):
        StackConfig(slstm_positions=(5,), **TINY)
    with pytest.raises(ValueError):
        StackConfig(ratio=(0, 0), **TINY)
    with pytest.raises(ValueError):
        StackConfig(vocab_size=11, embedding_dim=18, num_blocks=1)


def test_mlp_param_count():
    cfg = StackConfig(vocab_size=11, embedding_dim=96, num_blocks=1, ratio=(0, 1))
    assert cfg.mlp_dim == 128
    p = init_slstm_block(cfg, make_rng(0))
    assert p.up_W.size == 2 * 128 * 96
    assert p.down_W.size == 128 * 96


@pytest.mark.parametrize("kw", [
    dict(ratio=(1, 1)),
    dict(ratio=(0, 1), slstm_conv=False, groupnorm_affine=False),
    dict(ratio=(1, 0), mlstm_conv=False, slstm_block_diag_input=True),
    dict(ratio=(1, 1), input_dim=3, output_dim=2),
    dict(ratio=(1, 1), tie_weights=True),
])
def test_count_formula_matches_allocation(kw):
    cfg = StackConfig(**{**TINY, **kw})
    assert init_model(cfg, make_rng(0)).num_params() == count_params(cfg)


@pytest.mark.parametrize("vocab", [50257, 50304])
def test_125m_shape_param_count(vocab):
    cfg = StackConfig(vocab_size=vocab, embedding_dim=768, num_blocks=24, ratio=(1, 0))
    assert abs(count_params(cfg) / 163.8e6 - 1.0) < 0.02


@pytest.mark.parametrize("kind", ["s", "m"])
def test_zero_down_projection_gives_identity(kind):
    cfg = StackConfig(ratio=(1, 1), **TINY)
    rng = make_rng(1)
    p = init_slstm_block(cfg, rng) if kind == "s" else init_mlstm_block(cfg, rng)
    p.down_W[:] = 0.0
    x = rng.normal(size=(2, 6, 16))
    fwd = slstm_block_forward if kind == "s" else mlstm_block_forward
    y, _ = fwd(p, x, cfg)
    np.testing.assert_array_equal(y, x)


def test_mlstm_block_zero_skip_uses_norm_path_only():
    cfg = StackConfig(ratio=(1, 0), **TINY)
    rng = make_rng(2)
    p = init_mlstm_block(cfg, rng)
    x = rng.normal(size=(1, 5, 16))
    _, c1 = mlstm_block_forward(p, x, cfg)
    p.skip[:] = 0.0
    _, c0 = mlstm_block_forward(p, x, cfg)
    np.testing.assert_allclose(c1["s"] - c0["s"], c1["xc"], rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("ratio", [(1, 0), (0, 1), (1, 1)])
def test_model_is_causal(ratio):
    cfg = StackConfig(ratio=ratio, **TINY)
    model = init_model(cfg, make_rng(3))
    tokens = make_rng(4).integers(0, 11, 12)
    a, _ = model_forward(model, tokens)
    tokens[7] = (tokens[7] + 1) % 11
    b, _ = model_forward(model, tokens)
    np.testing.assert_array_equal(a[:7], b[:7])
    assert not np.allclose(a[7:], b[7:])


def test_recurrent_mode_matches_parallel():
    cfg = StackConfig(ratio=(1, 0), **TINY)
    model = init_model(cfg, make_rng(5))
    tokens = make_rng(6).integers(0, 11, (2, 9))
    a, _ = model_forward(model, tokens)
    model.cfg = dataclasses.replace(cfg, mlstm_mode="recurrent")
    b, _ = model_forward(model, tokens)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_out_of_range_token():
    model = init_model(StackConfig(ratio=(1, 1), **TINY), make_rng(7))
    with pytest.raises(ValueError):
        model_forward(model, np.array([1, 11]))
    with pytest.raises(ValueError):
        model_forward(model, np.array([1.0, 2.0]))


def test_zero_upstream_zero_grads():
    model = init_model(StackConfig(ratio=(1, 1), **TINY), make_rng(8))
    out, caches = model_forward(model, np.arange(8) % 11)
    grads = model_backward(model, caches, np.zeros_like(out))
    for arr in grads.arrays().values():
        np.testing.assert_array_equal(arr, 0.0)


def test_every_parameter_gets_a_gradient():
    model = init_model(StackConfig(ratio=(1, 1), **TINY), make_rng(9))
    out, caches = model_forward(model, make_rng(10).integers(0, 11, (2, 8)))
    grads = model_backward(model, caches, make_rng(11).normal(size=out.shape))
    assert grads.arrays().keys() == model.arrays().keys()
    for name, arr in grads.arrays().items():
        assert arr.shape == model.arrays()[name].shape
        if not name.endswith("cell.b_i"):     # the sLSTM input-gate bias gradient is exactly zero
            assert np.abs(arr).max() > 0, name


@pytest.mark.parametrize("kw", [
    dict(ratio=(1, 1)),
    dict(ratio=(0, 1)),
    dict(ratio=(1, 0)),
    dict(ratio=(1, 1), tie_weights=True, groupnorm_affine=False),
    dict(ratio=(1, 0), mlstm_forget_activation="exp", mlstm_mode="recurrent"),
    dict(ratio=(0, 1), slstm_forget_activation="exp", slstm_conv=False, input_dim=3, output_dim=1),
])
def test_model_gradcheck(kw):
    errs = model_gradcheck(StackConfig(**{**TINY, **kw}), seed=1)
    assert max(errs.values()) < 1e-4, max(errs.items(), key=lambda kv: kv[1])


def test_checkpoint_round_trip(tmp_path):
    cfg = StackConfig(ratio=(1, 1), slstm_positions=(0,), **TINY)
    model = init_model(cfg, make_rng(12))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, {"steps": 3})
    loaded, extra = load_checkpoint(path)
    assert extra == {"steps": 3}
    assert loaded.cfg == cfg
    for name, arr in model.arrays().items():
        np.testing.assert_array_equal(loaded.arrays()[name], arr)
    tokens = np.arange(6)
    np.testing.assert_array_equal(model_forward(model, tokens)[0], model_forward(loaded, tokens)[0])


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_memorize_one_sequence():
    cfg = StackConfig(ratio=(1, 1), **TINY)
    model = init_model(cfg, make_rng(13))
    rng = make_rng(14)
    tokens = rng.integers(0, 11, (1, 17))
    inputs, targets, mask = tokens[:, :-1], tokens[:, 1:], np.ones((1, 16))
    params = model.arrays()
    opt = init_optimizer(params)
    sched = ScheduleConfig(peak_lr=1e-2, total_steps=50)
    losses = []
    for step in range(1, 51):
        out, caches = model_forward(model, inputs)
        loss, dout = masked_cross_entropy(out, targets, mask)
        losses.append(loss)
        adamw_step(params, model_backward(model, caches, dout).arrays(), opt, lr_at(sched, step))
    assert losses[-1] < 0.5 * losses[0]
    assert losses[0] == pytest.approx(math.log(11), rel=0.2)
