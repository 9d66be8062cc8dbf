import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rganet.engine import Tape, Tensor, softmax_channels
from rganet.engine.gradcheck import check_gradients
from rganet.optim import LOG_CLAMP, AdamW, LossConfig, ce_loss, focal_loss, loss_fn


def probs_tensor(rng, N=2, C=3, H=4, W=5, requires_grad=True):
    logits = rng.standard_normal((N, C, H, W))
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    return Tensor(p, requires_grad=requires_grad)


class TestLossConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.gamma == 1.3 and cfg.alphas == (0.25, 0.25, 0.5)

    @pytest.mark.parametrize("kw", [
        dict(alphas=(0.3, 0.3, 0.3)), dict(alphas=(1.2, -0.2, 0.0)), dict(gamma=0.0), dict(kind="dice"),
    ])
    def test_rejected(self, kw):
        with pytest.raises(ValueError):
            LossConfig(**kw)

    def test_dispatch(self):
        assert loss_fn(LossConfig()) is focal_loss
        assert loss_fn(LossConfig(kind="ce")) is ce_loss


class TestLossValues:
    def test_focal_half_probability(self):
        p = Tensor(np.array([0.25, 0.25, 0.5]).reshape(1, 3, 1, 1))
        value = float(focal_loss(p, np.array([[2]])).data)
        assert value == pytest.approx(0.5 * 0.5 ** 1.3 * math.log(2), rel=1e-12)
        assert round(value, 4) == 0.1408

    def test_ce_uniform(self):
        p = Tensor(np.full((1, 3, 1, 1), 1 / 3))
        value = float(ce_loss(p, np.array([[2]])).data)
        assert value == pytest.approx(0.5 * math.log(3), rel=1e-12)
        assert round(value, 4) == 0.5493

    def test_perfect_prediction(self):
        p = np.zeros((1, 3, 2, 2))
        target = np.array([[[0, 1], [2, 2]]])
        np.put_along_axis(p, target[:, None], 1.0, axis=1)
        assert float(focal_loss(Tensor(p), target).data) == 0
        assert float(ce_loss(Tensor(p), target).data) <= 1e-11

    def test_zero_probability_is_clamped(self):
        p = Tensor(np.array([1.0, 0.0, 0.0]).reshape(1, 3, 1, 1))
        value = float(ce_loss(p, np.array([[2]])).data)
        assert value == pytest.approx(-0.5 * math.log(LOG_CLAMP))

    def test_mean_reduction(self, rng):
        p = probs_tensor(rng, requires_grad=False)
        target = rng.integers(0, 3, (2, 4, 5))
        y = np.take_along_axis(p.data, target[:, None], axis=1)[:, 0]
        alpha = np.array([0.25, 0.25, 0.5])[target]
        assert float(ce_loss(p, target).data) == pytest.approx(float((-alpha * np.log(y)).mean()), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_focal_below_ce_and_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        p = probs_tensor(rng, requires_grad=False)
        target = rng.integers(0, 3, (2, 4, 5))
        f, c = float(focal_loss(p, target).data), float(ce_loss(p, target).data)
        assert 0 <= f <= c

    def test_invalid_target(self, rng):
        p = probs_tensor(rng)
        with pytest.raises(ValueError, match="class"):
            focal_loss(p, np.full((2, 4, 5), 3))
        with pytest.raises(ValueError, match="shape"):
            focal_loss(p, np.zeros((2, 4, 4), int))


class TestLossGradients:
    @pytest.mark.parametrize("fn", [focal_loss, ce_loss])
    @pytest.mark.parametrize("shape", [(1, 3, 2, 2), (2, 3, 3, 4), (3, 3, 1, 5)])
    def test_wrt_probs(self, rng, fn, shape):
        p = probs_tensor(rng, *shape)
        target = rng.integers(0, 3, (shape[0], *shape[2:]))
        errs = check_gradients(lambda: fn(p, target), [p], h=1e-6)
        assert errs[0] < 1e-5

    @pytest.mark.parametrize("fn", [focal_loss, ce_loss])
    def test_through_softmax(self, rng, fn):
        z = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
        target = rng.integers(0, 3, (2, 3, 3))
        errs = check_gradients(lambda: fn(softmax_channels(z), target), [z], h=1e-6)
        assert errs[0] < 1e-5


class TestAdamW:
    def test_first_step_is_signed_lr(self, rng):
        p = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        g = rng.standard_normal((4, 5)) * 3
        start = p.data.copy()
        opt = AdamW([p], lr=1e-3)
        opt.step([g])
        np.testing.assert_allclose(p.data - start, -1e-3 * np.sign(g), rtol=1e-6)

    def test_zero_lr_is_identity(self, rng):
        p = Tensor(rng.standard_normal(6), requires_grad=True)
        start = p.data.copy()
        opt = AdamW([p], lr=0.0, weight_decay=0.1)
        for _ in range(5):
            opt.step([rng.standard_normal(6)])
        np.testing.assert_array_equal(p.data, start)

    def test_decoupled_weight_decay(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        AdamW([p], lr=0.1, weight_decay=0.5).step([np.array([0.0])])
        assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)
        q = Tensor(np.array([2.0]), requires_grad=True)
        AdamW([q], lr=0.1).step([np.array([0.0])])
        assert q.data[0] == 2.0

    def test_vmax_non_decreasing(self, rng):
        p = Tensor(rng.standard_normal(10), requires_grad=True)
        opt = AdamW([p], lr=1e-2)
        prev = opt.v_max[0].copy()
        for _ in range(100):
            opt.step([rng.standard_normal(10) * rng.uniform(0.01, 10)])
            assert (opt.v_max[0] >= prev).all()
            prev = opt.v_max[0].copy()

    def test_reads_param_grad(self, rng):
        p = Tensor(rng.standard_normal(3), requires_grad=True)
        with Tape() as tape:
            loss = (p * p).sum()
        tape.backward(loss, [p])
        start = p.data.copy()
        opt = AdamW([p], lr=0.01)
        opt.step()
        np.testing.assert_allclose(p.data, start - 0.01 * np.sign(start), rtol=1e-6)
        opt.zero_grad()
        assert p.grad is None

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError):
            AdamW([p]).step([np.zeros(4)])
        with pytest.raises(ValueError):
            AdamW([p]).step([])

    def test_minimizes_quadratic(self):
        p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        opt = AdamW([p], lr=0.05)
        for _ in range(500):
            opt.step([2 * p.data])
        assert np.abs(p.data).max() < 0.05
