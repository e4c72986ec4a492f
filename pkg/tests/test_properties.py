import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from xlstm_np import numerics as nx
from xlstm_np.tasks import PARITY_A, PARITY_B, TaskConfig, gen_mqar, parity_sample, scaled_accuracy
from xlstm_np.training import ScheduleConfig, lr_at
from xlstm_np.verify import equivalence_trial

FAST = settings(max_examples=25, deadline=None)
seeds = st.integers(0, 2**31 - 1)


@FAST
@given(seeds)
def test_stabilized_and_parallel_forms_agree(seed):
    errs = equivalence_trial(seed, max_t=24, max_d=12)
    assert max(errs.values()) < 1e-8, errs


@FAST
@given(seeds, st.integers(1, 4), st.integers(1, 6))
def test_group_norm_heads_are_standardized(seed, heads, dh):
    x = np.random.default_rng(seed).normal(2.0, 3.0, size=(3, heads * dh))
    y, _ = nx.group_norm(x, heads)
    np.testing.assert_allclose(y.reshape(3, heads, dh).mean(-1), 0.0, atol=1e-10)


@FAST
@given(seeds, st.integers(1, 5), st.integers(1, 12))
def test_causal_conv_is_linear(seed, kernel, T):
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(kernel, 2))
    a, b = rng.normal(size=(T, 2)), rng.normal(size=(T, 2))
    np.testing.assert_allclose(nx.causal_conv1d(a + 2.0 * b, k),
                               nx.causal_conv1d(a, k) + 2.0 * nx.causal_conv1d(b, k), atol=1e-12)


@FAST
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40))
def test_parity_target_matches_count(bits):
    s = parity_sample(bits)
    expect = PARITY_B if sum(bits) % 2 else PARITY_A
    assert s.targets[len(bits)] == expect
    assert s.mask.sum() == 1


@FAST
@given(seeds)
def test_mqar_targets_are_bound_values(seed):
    cfg = TaskConfig(kind="mqar", vocab_size=32, context=24, kv_pairs=3)
    s = gen_mqar(cfg, np.random.default_rng(seed))
    table = dict(zip(s.inputs[0:6:2].tolist(), s.inputs[1:6:2].tolist()))
    for pos in np.flatnonzero(s.mask):
        assert s.targets[pos] == table[int(s.inputs[pos])]


@FAST
@given(st.floats(1e-5, 1.0), st.integers(1, 20000), st.data())
def test_lr_stays_between_zero_and_peak(peak, total, data):
    s = ScheduleConfig(peak_lr=peak, total_steps=total)
    step = data.draw(st.integers(0, total))
    lr = lr_at(s, step)
    assert 0.0 <= lr <= peak * (1 + 1e-12)
    if step >= s.warmup and total > s.warmup:
        assert lr >= 0.1 * peak * (1 - 1e-12)


@FAST
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 0.99))
def test_scaled_accuracy_is_monotone(a, b, s_rand):
    lo, hi = sorted((a, b))
    assert scaled_accuracy(lo, s_rand) <= scaled_accuracy(hi, s_rand)
    assert scaled_accuracy(1.0, s_rand) == 1.0
