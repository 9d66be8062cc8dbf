"""Numpy im2col / col2im, used when the compiled core is unavailable."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    N, C, H, W = x.shape
    ho = _out_size(H, kh, stride, pad)
    wo = _out_size(W, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, C, ho, wo, kh, kw) -> (N, C, kh, kw, ho, wo)
    cols = win.transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(cols).reshape(N, C * kh * kw, ho * wo)


def col2im(cols, shape, kh, kw, stride, pad):
    N, C, H, W = shape
    ho = _out_size(H, kh, stride, pad)
    wo = _out_size(W, kw, stride, pad)
    cols = cols.reshape(N, C, kh, kw, ho, wo)
    out = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad : pad + H, pad : pad + W]
    return np.ascontiguousarray(out)
