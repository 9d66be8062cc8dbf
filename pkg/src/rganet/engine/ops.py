"""Differentiable ops over NCHW tensors.

Every op computes its forward result with numpy and hands a backward
closure to :func:`record`; the closure maps the output gradient to a tuple
of input gradients (``None`` for inputs that take no gradient).
"""

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, record


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(out, (a, b), backward)


def neg(a):
    return record(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(out, (a, b), backward)


def scale(a, factor):
    """Multiply by a python constant."""
    return record(a.data * a.dtype.type(factor), (a,), lambda g: (g * a.dtype.type(factor),))


def sum(a):
    return record(a.data.sum(keepdims=False).reshape(()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a):
    n = a.size

    def backward(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)

    return record(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward)


# -- shape ops ---------------------------------------------------------------

def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def reshape(a, shape):
    src = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"cannot concat {t.shape} with {ref} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        idx = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return tuple(grads)

    return record(out, tensors, backward)


# -- activations -------------------------------------------------------------

def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    s = _sigmoid(x.data)
    return record(s, (x,), lambda g: (g * s * (1 - s),))


def swish(x):
    s = _sigmoid(x.data)
    out = x.data * s

    def backward(g):
        return (g * (s + x.data * s * (1 - s)),)

    return record(out, (x,), backward)


def relu(x):
    mask = x.data > 0
    return record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def softmax_channels(x):
    """Softmax over axis 1 of an NCHW tensor, per pixel."""
    if x.ndim != 4 or x.shape[1] < 1:
        raise ShapeError(f"softmax_channels needs NCHW with C >= 1, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return record(p, (x,), backward)


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


_ACTIVATIONS = {
    "swish": swish,
    "sigmoid": sigmoid,
    "relu": relu,
    "softmax_channels": softmax_channels,
}


# -- convolution -------------------------------------------------------------

def _check_nchw(x, what):
    if x.ndim != 4:
        raise ShapeError(f"{what} expects an NCHW tensor, got shape {x.shape}")
    if 0 in x.shape:
        raise ShapeError(f"{what} got a zero-extent input {x.shape}")


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (N,C,H,W) with ``weight`` (O,C,kh,kw).

    1x1 stride-1 kernels run as a plain matmul; larger kernels go through
    im2col.
    """
    _check_nchw(x, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (out, in, kh, kw), got {weight.shape}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise ValueError("padding must be non-negative")
    N, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ShapeError(f"conv2d kernel expects {Ci} input channels, input has {C}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {H}x{W} with padding {padding}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"bias shape {bias.shape} != ({O},)")

    w2 = weight.data.reshape(O, -1)
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.reshape(N, C, H * W)
    else:
        cols = kernels.im2col(x.data, kh, kw, stride, padding)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(N, O, Ho, Wo)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(N, O, Ho * Wo)
        gw = np.einsum("nop,nkp->ok", g2, cols).reshape(weight.shape)
        gcols = np.matmul(w2.T, g2)
        if pointwise:
            gx = gcols.reshape(x.shape)
        else:
            gx = kernels.col2im(gcols, x.shape, kh, kw, stride, padding)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=(0, 2))

    return record(out, inputs, backward)


def conv_transpose2x2(x, weight):
    """Stride-2 2x2 transposed convolution, weight shaped (C, O, 2, 2)."""
    _check_nchw(x, "conv_transpose2x2")
    N, C, H, W = x.shape
    if weight.shape[0] != C or weight.shape[2:] != (2, 2):
        raise ShapeError(f"deconv weight {weight.shape} incompatible with {C} channels")
    O = weight.shape[1]
    # out[n, o, 2i+a, 2j+b] = sum_c x[n,c,i,j] w[c,o,a,b]
    t = np.einsum("nchw,coab->nohawb", x.data, weight.data)
    out = t.reshape(N, O, 2 * H, 2 * W)

    def backward(g):
        g6 = g.reshape(N, O, H, 2, W, 2)
        gx = np.einsum("nohawb,coab->nchw", g6, weight.data)
        gw = np.einsum("nohawb,nchw->coab", g6, x.data)
        return gx, gw

    return record(out, (x, weight), backward)


def depthwise_long_conv(view, kernels_, collapse):
    """Long-kernel depth-wise convolution over D slices of R x S matrices.

    ``view`` is (N, D, R, S). With ``collapse="cols"`` each slice d is
    reduced along its columns by the length-S kernel ``kernels_[d]`` giving
    (N, D, R, 1); ``collapse="rows"`` reduces rows with length-R kernels
    giving (N, D, 1, S). Kernels are never shared across slices.
    """
    if view.ndim != 4:
        raise ShapeError(f"depthwise_long_conv expects (N, D, R, S), got {view.shape}")
    N, D, R, S = view.shape
    if kernels_.ndim != 2 or kernels_.shape[0] != D:
        raise ShapeError(f"need {D} kernels for {D} slices, got kernel array {kernels_.shape}")
    if collapse == "cols":
        if kernels_.shape[1] != S:
            raise ShapeError(f"column-collapsing kernels must have length {S}, got {kernels_.shape[1]}")
        out = np.einsum("ndrs,ds->ndr", view.data, kernels_.data)[..., None]

        def backward(g):
            g = g[..., 0]
            return (
                np.einsum("ndr,ds->ndrs", g, kernels_.data),
                np.einsum("ndr,ndrs->ds", g, view.data),
            )

    elif collapse == "rows":
        if kernels_.shape[1] != R:
            raise ShapeError(f"row-collapsing kernels must have length {R}, got {kernels_.shape[1]}")
        out = np.einsum("ndrs,dr->nds", view.data, kernels_.data)[:, :, None, :]

        def backward(g):
            g = g[:, :, 0, :]
            return (
                np.einsum("nds,dr->ndrs", g, kernels_.data),
                np.einsum("nds,ndrs->dr", g, view.data),
            )

    else:
        raise ValueError(f"collapse must be 'rows' or 'cols', got {collapse!r}")
    return record(out, (view, kernels_), backward)


def slice_outer_product(cols, rows):
    """Per-slice outer product: (N,D,R,1) x (N,D,1,S) -> (N,D,R,S)."""
    if cols.ndim != 4 or rows.ndim != 4 or cols.shape[3] != 1 or rows.shape[2] != 1:
        raise ShapeError(f"expected (N,D,R,1) and (N,D,1,S), got {cols.shape} and {rows.shape}")
    if cols.shape[:2] != rows.shape[:2]:
        raise ShapeError(f"slice depth mismatch: {cols.shape[:2]} vs {rows.shape[:2]}")
    out = cols.data * rows.data

    def backward(g):
        return (
            (g * rows.data).sum(axis=3, keepdims=True),
            (g * cols.data).sum(axis=2, keepdims=True),
        )

    return record(out, (cols, rows), backward)


def upsample_nearest2x(x):
    _check_nchw(x, "upsample_nearest2x")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    N, C, H, W = x.shape

    def backward(g):
        return (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return record(out, (x,), backward)


# -- normalization -----------------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch normalization of an NCHW tensor.

    In training mode the batch statistics normalize ``x`` and the running
    arrays (plain numpy, updated in place) move toward them by ``momentum``.
    Evaluation mode uses the running statistics.
    """
    _check_nchw(x, "batchnorm")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,) or running_mean.shape != (C,):
        raise ShapeError(f"batchnorm parameters sized {gamma.shape}, input has {C} channels")
    g_ = gamma.data[None, :, None, None]
    b_ = beta.data[None, :, None, None]
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu[None, :, None, None].astype(x.dtype)) * inv[None, :, None, None]
    out = xhat * g_ + b_

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * g_
        if training:
            m = x.size // C
            gx = (inv[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return record(out, (x, gamma, beta), backward)
