"""Pixel-wise losses over class probabilities and the AdamW/AMSGrad optimizer."""

import math
from dataclasses import dataclass

import numpy as np

from .engine.tensor import record

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossConfig:
    kind: str = "focal"
    gamma: float = 1.3
    alphas: tuple = (0.25, 0.25, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.kind not in ("focal", "ce"):
            raise ValueError(f"loss kind must be 'focal' or 'ce', got {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if any(a < 0 for a in self.alphas):
            raise ValueError(f"class weights must be non-negative, got {self.alphas}")
        if abs(math.fsum(self.alphas) - 1.0) > 1e-9:
            raise ValueError(f"class weights must sum to 1, got {math.fsum(self.alphas)}")


def _target_probs(probs, target, n_alphas):
    if probs.ndim != 4:
        raise ValueError(f"probs must be (N, C, H, W), got {probs.shape}")
    target = np.asarray(target)
    if target.ndim == 2:
        target = target[None]
    N, C, H, W = probs.shape
    if target.shape != (N, H, W):
        raise ValueError(f"target shape {target.shape} does not match probs {probs.shape}")
    if target.min() < 0 or target.max() >= min(C, n_alphas):
        raise ValueError(f"target class indices must lie in [0, {min(C, n_alphas)})")
    idx = target.astype(np.intp)[:, None]
    y = np.take_along_axis(probs.data, idx, axis=1)[:, 0]
    return idx, y


def _pixel_loss(probs, target, cfg, focal):
    idx, y = _target_probs(probs, target, len(cfg.alphas))
    alpha = np.asarray(cfg.alphas, dtype=probs.dtype)[idx[:, 0]]
    clamped = y < LOG_CLAMP
    logy = np.log(np.maximum(y, LOG_CLAMP))
    dlog = np.where(clamped, 0.0, 1.0 / np.maximum(y, LOG_CLAMP))
    if focal:
        g = cfg.gamma
        one_m = np.clip(1.0 - y, 0.0, None)
        mod = one_m ** g
        with np.errstate(divide="ignore", invalid="ignore"):
            dmod = np.where(one_m > 0, -g * one_m ** (g - 1), 0.0)
        per_pixel = -alpha * mod * logy
        dy = -alpha * (dmod * logy + mod * dlog)
    else:
        per_pixel = -alpha * logy
        dy = -alpha * dlog
    n = y.size
    value = np.asarray(per_pixel.mean(), dtype=probs.dtype)

    def backward(gout):
        grad = np.zeros_like(probs.data)
        np.put_along_axis(grad, idx, (gout * dy / n)[:, None].astype(probs.dtype), axis=1)
        return (grad,)

    return record(value, (probs,), backward)


def focal_loss(probs, target, cfg=LossConfig()):
    """Mean over pixels of -alpha_t (1 - y_t)^gamma log y_t, y_t the target-class probability."""
    return _pixel_loss(probs, target, cfg, focal=True)


def ce_loss(probs, target, cfg=LossConfig(kind="ce")):
    """Class-weighted cross-entropy, mean over pixels."""
    return _pixel_loss(probs, target, cfg, focal=False)


def loss_fn(cfg):
    return focal_loss if cfg.kind == "focal" else ce_loss


class AdamW:
    """AdamW with the AMSGrad max-of-second-moments rule.

    Bias correction is applied to the running maximum ``v_max``; weight
    decay is decoupled (``theta -= lr * weight_decay * theta``).
    """

    def __init__(self, params, lr=1.5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.v_max = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        """Apply one update using ``grads`` (list aligned with params) or ``p.grad``."""
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v, vmax in zip(self.params, grads, self.m, self.v, self.v_max):
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            np.maximum(vmax, v, out=vmax)
            update = self.lr * (m / c1) / (np.sqrt(vmax / c2) + self.eps)
            if self.weight_decay:
                update = update + self.lr * self.weight_decay * p.data
            p.data = (p.data - update).astype(p.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

