import math

import numpy as np
import pytest

from xlstm_np.gradcheck import numerical_grad, rel_error
from xlstm_np.training import (ScheduleConfig, adamw_step, init_optimizer, lr_at, masked_accuracy,
                               masked_cross_entropy, mse_loss)


def test_adamw_first_step_by_hand():
    p = {"w": np.array([1.0])}
    opt = init_optimizer(p, weight_decay=0.1)
    adamw_step(p, {"w": np.array([1.0])}, opt, lr=0.1)
    # decay 1 -> 0.99, then the bias-corrected step is lr * 1 / (1 + eps)
    assert p["w"][0] == pytest.approx(0.99 - 0.1 / (1.0 + 1e-5), abs=1e-15)
    assert opt.step == 1


def test_adamw_zero_grad_no_decay_is_identity():
    p = {"w": np.array([0.3, -2.0])}
    opt = init_optimizer(p, weight_decay=0.0)
    for _ in range(3):
        adamw_step(p, {"w": np.zeros(2)}, opt, lr=0.5)
    np.testing.assert_array_equal(p["w"], [0.3, -2.0])


def test_embedding_is_never_decayed():
    p = {"embed": np.ones(3), "w": np.ones(3)}
    opt = init_optimizer(p, weight_decay=0.1, no_decay=())
    adamw_step(p, {"embed": np.zeros(3), "w": np.zeros(3)}, opt, lr=1.0)
    np.testing.assert_array_equal(p["embed"], 1.0)
    np.testing.assert_allclose(p["w"], 0.9)


def test_adamw_rejects_mismatched_state():
    p = {"w": np.ones(2)}
    opt = init_optimizer(p)
    with pytest.raises(ValueError):
        adamw_step({"v": np.ones(2)}, {"v": np.ones(2)}, opt, lr=0.1)
    with pytest.raises(ValueError):
        adamw_step(p, {"w": np.ones(3)}, opt, lr=0.1)


def test_adamw_minimizes_quadratic_bowl():
    target = np.array([1.0, -3.0, 0.5])
    p = {"w": np.zeros(3)}
    opt = init_optimizer(p, weight_decay=0.0)
    for _ in range(500):
        adamw_step(p, {"w": 2.0 * (p["w"] - target)}, opt, lr=0.05)
    np.testing.assert_allclose(p["w"], target, atol=1e-2)


def test_schedule_examples():
    s = ScheduleConfig(peak_lr=1.0, total_steps=10_000)
    assert s.warmup == 750
    assert lr_at(s, 0) == 0.0
    assert lr_at(s, 375) == pytest.approx(0.5)
    assert lr_at(s, 750) == pytest.approx(1.0)
    assert lr_at(s, 10_000) == pytest.approx(0.1)
    mid = 750 + (10_000 - 750) // 2
    assert lr_at(s, mid) == pytest.approx(0.55, abs=1e-3)


def test_short_run_warmup_is_ten_percent():
    s = ScheduleConfig(peak_lr=2.0, total_steps=1000)
    assert s.warmup == 100
    assert lr_at(s, 50) == pytest.approx(1.0)


def test_schedule_continuous_and_bounded():
    s = ScheduleConfig(peak_lr=3e-3, total_steps=2000)
    lrs = np.array([lr_at(s, k) for k in range(2001)])
    assert np.all(lrs <= 3e-3 + 1e-18)
    assert np.max(np.abs(np.diff(lrs))) < 3e-3 / 100
    assert np.all(np.diff(lrs[s.warmup:]) <= 1e-18)


def test_schedule_errors():
    s = ScheduleConfig(peak_lr=1.0, total_steps=10)
    with pytest.raises(ValueError):
        lr_at(s, 11)
    with pytest.raises(ValueError):
        lr_at(s, -1)
    with pytest.raises(ValueError):
        ScheduleConfig(peak_lr=1.0, total_steps=0)


def test_cross_entropy_uniform_logits():
    loss, _ = masked_cross_entropy(np.zeros((2, 4, 7)), np.zeros((2, 4), dtype=int), np.ones((2, 4)))
    assert loss == pytest.approx(math.log(7))


def test_cross_entropy_grad_fd():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(3, 5))
    targets = np.array([4, 0, 2])
    mask = np.array([1.0, 0.0, 1.0])
    _, d = masked_cross_entropy(logits, targets, mask)
    num = numerical_grad(lambda: masked_cross_entropy(logits, targets, mask)[0], logits)
    assert rel_error(d, num) < 1e-7
    np.testing.assert_array_equal(d[1], 0.0)


def test_loss_is_mean_of_per_sequence_means():
    logits = np.zeros((2, 3, 2))
    logits[0, 0] = [5.0, 0.0]
    targets = np.zeros((2, 3), dtype=int)
    mask = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    loss, _ = masked_cross_entropy(logits, targets, mask)
    nll0 = math.log(1.0 + math.exp(-5.0))
    assert loss == pytest.approx(0.5 * (nll0 + math.log(2.0)))


def test_mse_examples():
    loss, d = mse_loss(np.array([0.0, 1.0, 3.0]), np.array([1.0, 1.0, 0.0]), np.array([1.0, 1.0, 0.0]))
    assert loss == pytest.approx(0.5)
    np.testing.assert_allclose(d, [-1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        mse_loss(np.zeros(2), np.zeros(2), np.zeros(2))


def test_masked_accuracy():
    logits = np.array([[[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]])
    assert masked_accuracy(logits, np.array([[1, 1, 0]]), np.array([[1, 1, 0]])) == (1, 2)
    three = np.array([[0.0, 1.0, 5.0]])
    assert masked_accuracy(three, np.array([1]), np.array([1])) == (0, 1)
    assert masked_accuracy(three, np.array([1]), np.array([1]), classes=2) == (1, 1)


def test_overfit_small_classification():
    # softmax regression memorizing 40 random labels reaches well above chance
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 32))
    y = rng.integers(0, 4, 40)
    p = {"W": np.zeros((32, 4))}
    opt = init_optimizer(p, weight_decay=0.0)
    sched = ScheduleConfig(peak_lr=0.1, total_steps=200)
    for step in range(1, 201):
        loss, d = masked_cross_entropy((X @ p["W"])[None], y[None], np.ones((1, 40)))
        adamw_step(p, {"W": X.T @ d[0]}, opt, lr_at(sched, step))
    hits, n = masked_accuracy((X @ p["W"])[None], y[None], np.ones((1, 40)))
    assert hits / n >= 0.5
