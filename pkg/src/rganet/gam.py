"""Global attention module.

The input volume (N, c, h, w) is read through two rotated views. The query
view slices it along the width into w matrices of shape c x h; the key view
slices along the height into h matrices of shape w x c. Each slice is
collapsed along both of its axes by its own long depth-wise kernels, the two
resulting vectors are multiplied back into a full slice (outer product) and
the slices are rotated back to (c, h, w). Query and key encodings are
concatenated, batch-normalized, fused to c channels by a 1x1 conv, passed
through swish and finally squashed into a [0, 1] weights volume.
"""

import numpy as np

from .engine import ops
from .engine.nn import BatchNorm2d, Conv2d, Module, kaiming_uniform
from .engine.tensor import Tensor

OUT_MAPS = ("sigmoid", "softmax_channels")


def gam_param_count(h, w, c, include_aux=False):
    """Trainable scalars of a GAM for an (h, w, c) input.

    Without aux layers this is the depth-wise kernel total 2hw + cw + hc.
    ``include_aux`` adds the 1x1 fuse conv (2c*c weights + c biases) and the
    batch-norm scale/shift over 2c channels.
    """
    n = 2 * h * w + c * w + h * c
    if include_aux:
        n += 2 * c * c + c + 2 * (2 * c)
    return n


def vanilla_param_count(h, w, c):
    """Same-extent dense (non depth-wise) kernels, for comparison."""
    return h * w * w + w * h * h + c * w * w + c * h * h


class GAM(Module):
    """Attention over a fixed (c, h, w) feature volume.

    Kernel lengths depend on h and w, so a GAM is bound to one input
    resolution.
    """

    def __init__(self, c, h, w, out_map="sigmoid", rng=None):
        super().__init__()
        if min(c, h, w) < 1:
            raise ValueError(f"GAM extents must be positive, got c={c} h={h} w={w}")
        if out_map not in OUT_MAPS:
            raise ValueError(f"out_map must be one of {OUT_MAPS}, got {out_map!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c, self.h, self.w = c, h, w
        self.out_map = out_map
        # query: w slices of c x h; key: h slices of w x c
        self.wq_h = Tensor(kaiming_uniform(rng, (w, h), h), requires_grad=True)
        self.wq_c = Tensor(kaiming_uniform(rng, (w, c), c), requires_grad=True)
        self.wk_w = Tensor(kaiming_uniform(rng, (h, w), w), requires_grad=True)
        self.wk_c = Tensor(kaiming_uniform(rng, (h, c), c), requires_grad=True)
        self.bn = BatchNorm2d(2 * c)
        self.fuse = Conv2d(2 * c, c, 1, bias=True, rng=rng)

    def depthwise_parameters(self):
        return [self.wq_h, self.wq_c, self.wk_w, self.wk_c]

    def encode(self, x):
        """Concatenated query/key encodings, (N, 2c, h, w)."""
        if x.ndim != 4 or x.shape[1:] != (self.c, self.h, self.w):
            raise ops.ShapeError(
                f"GAM built for (c, h, w)=({self.c}, {self.h}, {self.w}), got input {x.shape}"
            )
        q = ops.permute(x, (0, 3, 1, 2))                      # (N, w, c, h)
        q_h = ops.depthwise_long_conv(q, self.wq_h, "cols")  # (N, w, c, 1)
        q_c = ops.depthwise_long_conv(q, self.wq_c, "rows")  # (N, w, 1, h)
        a_q = ops.permute(ops.slice_outer_product(q_h, q_c), (0, 2, 3, 1))

        k = ops.permute(x, (0, 2, 3, 1))                      # (N, h, w, c)
        k_c = ops.depthwise_long_conv(k, self.wk_c, "cols")  # (N, h, w, 1)
        k_v = ops.depthwise_long_conv(k, self.wk_w, "rows")  # (N, h, 1, c)
        a_k = ops.permute(ops.slice_outer_product(k_c, k_v), (0, 3, 1, 2))
        return ops.concat([a_q, a_k], axis=1)

    def weights(self, x):
        z = ops.swish(self.fuse(self.bn(self.encode(x))))
        return ops.activation(z, self.out_map)

    def forward(self, x):
        """Return ``(lam, f_out)`` with ``f_out = lam * x``."""
        lam = self.weights(x)
        return lam, ops.mul(lam, x)

    def flops(self):
        c, h, w = self.c, self.h, self.w
        chw = c * h * w
        depthwise = 2 * 4 * chw          # four long-kernel reductions
        outer = 2 * 2 * chw              # two outer products
        squash = 3 * chw
        return (
            depthwise + outer + self.bn.flops(h, w) + self.fuse.flops(h, w)
            + 4 * chw + squash + chw     # swish, out map, lam * x
        )


def gam_forward(x, gam):
    """Functional alias of ``gam(x)``; the module's train/eval flag is the mode."""
    return gam(x)


def gam_residual(x, lam):
    """(1 + lam) * x, elementwise."""
    if x.shape != lam.shape:
        raise ops.ShapeError(f"residual needs equal shapes, got {x.shape} and {lam.shape}")
    return ops.add(x, ops.mul(lam, x))
