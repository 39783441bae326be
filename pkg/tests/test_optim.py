"""Optimizer and schedule against hand-rolled references."""

import math

import numpy as np
import pytest

from viewfuse.nn import ParameterRegistry
from viewfuse.optim import AdamW, AdamWConfig, lr_at
from viewfuse.tensor import Tensor


def _registry_with(name, value, trainable=True):
    reg = ParameterRegistry()
    reg.register(name, value.shape)
    reg.materialize(seed=0)
    reg.get(name).data[...] = value
    reg.set_trainable(name, trainable)
    return reg


class TestAdamW:
    def test_two_steps_match_reference(self):
        rng = np.random.default_rng(0)
        p0 = rng.normal(0, 1, (4, 3)).astype(np.float32)
        grads = [rng.normal(0, 1, (4, 3)).astype(np.float32) for _ in range(2)]
        cfg = AdamWConfig(beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.05)
        lr = 1e-2

        reg = _registry_with("w", p0.copy())
        opt = AdamW(reg, cfg)
        for g in grads:
            reg.get("w").grad = g.astype(np.float64)
            opt.step(lr)

        # reference: decoupled decay first, then bias-corrected moments
        ref = p0.astype(np.float64).copy()
        m = np.zeros_like(ref)
        v = np.zeros_like(ref)
        for t, g in enumerate(grads, start=1):
            g = g.astype(np.float64)
            ref -= lr * cfg.weight_decay * ref
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            mhat = m / (1 - cfg.beta1 ** t)
            vhat = v / (1 - cfg.beta2 ** t)
            ref -= lr * mhat / (np.sqrt(vhat) + cfg.eps)
        np.testing.assert_allclose(reg.get("w").data, ref.astype(np.float32), rtol=1e-6)

    def test_decay_is_decoupled_from_moments(self):
        # zero gradient: pure decay, moments stay zero and contribute nothing
        p0 = np.full((3,), 2.0, dtype=np.float32)
        reg = _registry_with("w", p0.copy())
        opt = AdamW(reg, AdamWConfig(weight_decay=0.1))
        reg.get("w").grad = np.zeros(3, dtype=np.float64)
        opt.step(0.5)
        np.testing.assert_allclose(reg.get("w").data, p0 * (1 - 0.5 * 0.1), rtol=1e-7)

    def test_frozen_params_untouched(self):
        p0 = np.ones((2, 2), dtype=np.float32)
        reg = _registry_with("w", p0.copy(), trainable=False)
        opt = AdamW(reg, AdamWConfig())
        opt.step(1e-2)  # no grads needed for frozen params
        np.testing.assert_array_equal(reg.get("w").data, p0)

    def test_missing_grad_on_trainable_param_raises(self):
        reg = _registry_with("w", np.ones((2,), dtype=np.float32))
        opt = AdamW(reg, AdamWConfig())
        with pytest.raises(RuntimeError):
            opt.step(1e-2)

    def test_state_is_per_parameter(self):
        reg = ParameterRegistry()
        reg.register("a", (2,))
        reg.register("b", (2,))
        reg.materialize(seed=0)
        opt = AdamW(reg, AdamWConfig())
        reg.get("a").grad = np.array([1.0, 1.0])
        reg.get("b").grad = np.array([-1.0, -1.0])
        a0, b0 = reg.get("a").data.copy(), reg.get("b").data.copy()
        opt.step(1e-2)
        assert np.all(reg.get("a").data < a0)
        assert np.all(reg.get("b").data > b0)


class TestLrSchedule:
    def test_linear_warmup_values(self):
        for epoch in range(10):
            expected = 5e-4 * (epoch + 1) / 10
            assert lr_at(epoch, 400, 5e-4, 10, 1e-5) == pytest.approx(expected)

    def test_cosine_tail_values(self):
        base, warm, total, floor = 5e-4, 10, 400, 1e-5
        for epoch in (10, 200, 399):
            progress = (epoch - warm) / (total - warm)
            expected = floor + (base - floor) * 0.5 * (1 + math.cos(math.pi * progress))
            assert lr_at(epoch, total, base, warm, floor) == pytest.approx(expected)

    def test_continuous_at_warmup_boundary(self):
        before = lr_at(9, 400, 5e-4, 10, 1e-5)
        after = lr_at(10, 400, 5e-4, 10, 1e-5)
        assert before == pytest.approx(5e-4)
        assert after <= before
        assert after == pytest.approx(5e-4, rel=2e-4)

    def test_final_epoch_reaches_min_lr(self):
        total = 400
        lr = lr_at(total - 1, total, 5e-4, 10, 1e-5)
        assert lr == pytest.approx(1e-5, rel=1e-3)

    def test_monotone_decay_after_warmup(self):
        lrs = [lr_at(e, 100, 1e-3, 5, 1e-5) for e in range(5, 100)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_warmup_must_be_shorter_than_run(self):
        with pytest.raises(ValueError):
            lr_at(0, 5, 1e-3, 10, 1e-5)
