"""Dense bottleneck stacks (ESS-n) and the vote-and-upsample block."""

from dataclasses import dataclass

import numpy as np

from .engine import ops
from .engine.nn import BatchNorm2d, Conv2d, Module, kaiming_uniform
from .engine.tensor import Tensor


@dataclass(frozen=True)
class EssConfig:
    n: int
    k: int
    s: int = 4
    c_in: int | None = None

    def __post_init__(self):
        if self.n < 0 or self.k < 1 or self.s < 1:
            raise ValueError(f"invalid ESS config n={self.n} k={self.k} s={self.s}")
        if self.c_in is None:
            object.__setattr__(self, "c_in", self.k)

    @property
    def out_channels(self):
        return self.c_in + self.n * self.k


def bottleneck_param_count(c_in, k, s):
    sk = s * k
    return c_in * sk + 2 * sk + sk * k * 9 + 2 * k


def ess_param_count(cfg):
    """Closed-form trainable scalars of an ESS-n block."""
    return sum(
        bottleneck_param_count(cfg.c_in + i * cfg.k, cfg.k, cfg.s) for i in range(cfg.n)
    )


class Bottleneck(Module):
    """1x1 expand to s*k -> BN -> swish -> 3x3 squeeze to k -> BN -> swish."""

    def __init__(self, c_in, k, s=4, rng=None):
        super().__init__()
        self.expand = Conv2d(c_in, s * k, 1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(s * k)
        self.squeeze = Conv2d(s * k, k, 3, padding=1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(k)

    def forward(self, x):
        if x.shape[1] != self.expand.in_channels:
            raise ops.ShapeError(
                f"bottleneck expects {self.expand.in_channels} channels, got {x.shape[1]}"
            )
        y = ops.swish(self.bn1(self.expand(x)))
        return ops.swish(self.bn2(self.squeeze(y)))

    def flops(self, h, w):
        sk, k = self.expand.out_channels, self.squeeze.out_channels
        return (
            self.expand.flops(h, w) + self.bn1.flops(h, w) + 4 * sk * h * w
            + self.squeeze.flops(h, w) + self.bn2.flops(h, w) + 4 * k * h * w
        )


class ESS(Module):
    """n densely connected bottlenecks; each appends k channels to the stack.

    Earlier features come first, so the leading c_in channels of the output
    are the block input unchanged.
    """

    def __init__(self, cfg, rng=None):
        super().__init__()
        self.cfg = cfg
        self.bnks = []
        for j in range(cfg.n):
            bnk = Bottleneck(cfg.c_in + j * cfg.k, cfg.k, cfg.s, rng=rng)
            setattr(self, f"bnk{j + 1}", bnk)
            self.bnks.append(bnk)

    def forward(self, x):
        if x.shape[1] != self.cfg.c_in:
            raise ops.ShapeError(f"ESS expects {self.cfg.c_in} input channels, got {x.shape[1]}")
        state = x
        for bnk in self.bnks:
            state = ops.concat([state, bnk(state)], axis=1)
        return state

    def flops(self, h, w):
        return sum(b.flops(h, w) for b in self.bnks)


class VU(Module):
    """Vote and upsample: concat -> bias-free 1x1 conv to k -> 2x upsample.

    ``mode="deconv"`` swaps nearest upsampling for a 2x2 stride-2
    transposed conv.
    """

    def __init__(self, c_deep, c_highway, k, mode="nearest", rng=None):
        super().__init__()
        if mode not in ("nearest", "deconv"):
            raise ValueError(f"VU mode must be 'nearest' or 'deconv', got {mode!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_deep, self.c_highway = c_deep, c_highway
        self.mode = mode
        self.vote = Conv2d(c_deep + c_highway, k, 1, bias=False, rng=rng)
        if mode == "deconv":
            self.deconv = Tensor(kaiming_uniform(rng, (k, k, 2, 2), k), requires_grad=True)

    def forward(self, deep, highway=None):
        if highway is not None:
            if deep.shape[2:] != highway.shape[2:]:
                raise ops.ShapeError(
                    f"VU inputs differ spatially: {deep.shape[2:]} vs {highway.shape[2:]}"
                )
            x = ops.concat([deep, highway], axis=1)
        else:
            x = deep
        if x.shape[1] != self.vote.in_channels:
            raise ops.ShapeError(f"VU expects {self.vote.in_channels} channels, got {x.shape[1]}")
        v = self.vote(x)
        if self.mode == "deconv":
            return ops.conv_transpose2x2(v, self.deconv)
        return ops.upsample_nearest2x(v)

    def flops(self, h, w):
        k = self.vote.out_channels
        up = 2 * k * k * 4 * h * w if self.mode == "deconv" else 0
        return self.vote.flops(h, w) + up
