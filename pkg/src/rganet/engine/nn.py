"""Module containers and the two stock layers (conv, batch-norm)."""

import math

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Holds parameters, non-trainable buffers and child modules.

    Attribute assignment sorts values into the right registry, so a layer
    just sets ``self.weight = Tensor(...)``; names follow assignment order.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, np.ndarray) and name in self._buffers:
            self._buffers[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def num_params(self):
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state):
        expected = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(expected) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in expected.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        for name, b in buffers.items():
            arr = np.asarray(state[name])
            if arr.shape != b.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {b.shape}")
            b[...] = arr

    def train(self, mode=True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast all parameters and buffers in place (e.g. to float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for name, b in list(m._buffers.items()):
                m.register_buffer(name, b.astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng, shape, fan_in, dtype=np.float32):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel_size, stride=1, padding=0, bias=True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = c_in * k * k
        self.weight = Tensor(kaiming_uniform(rng, (c_out, c_in, k, k), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, np.float32), requires_grad=True) if bias else None

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def out_hw(self, h, w):
        k = self.weight.shape[2]
        return (
            (h + 2 * self.padding - k) // self.stride + 1,
            (w + 2 * self.padding - k) // self.stride + 1,
        )

    def flops(self, h, w):
        ho, wo = self.out_hw(h, w)
        macs = self.weight.size * ho * wo
        extra = self.out_channels * ho * wo if self.bias is not None else 0
        return 2 * macs + extra


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=ops.BN_MOMENTUM, eps=ops.BN_EPS):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, np.float32))
        self.register_buffer("running_var", np.ones(channels, np.float32))

    def forward(self, x):
        return ops.batchnorm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )

    def flops(self, h, w):
        # scale + shift per element
        return 2 * self.weight.size * h * w
