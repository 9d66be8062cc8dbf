# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im for NCHW tensors."""
import numpy as np

ctypedef fused real:
    float
    double


cdef inline void _valid_cols(Py_ssize_t j, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t W,
                             Py_ssize_t wo, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output columns ox with 0 <= ox*stride - pad + j < W
    cdef Py_ssize_t a = pad - j, b = W + pad - j
    lo[0] = (a + stride - 1) // stride if a > 0 else 0
    hi[0] = (b + stride - 1) // stride if b > 0 else 0
    if hi[0] > wo:
        hi[0] = wo
    if lo[0] > hi[0]:
        lo[0] = hi[0]


cdef void _im2col(const real[:, :, :, ::1] x, real[:, :, ::1] cols,
                  Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                  Py_ssize_t pad, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, lo, hi
    cdef const real* src
    cdef real* dst
    for n in range(N):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    _valid_cols(j, stride, pad, W, wo, &lo, &hi)
                    dst = &cols[n, (c * kh + i) * kw + j, 0]
                    for oy in range(ho):
                        iy = oy * stride - pad + i
                        if iy < 0 or iy >= H:
                            for ox in range(wo):
                                dst[ox] = 0
                        else:
                            src = &x[n, c, iy, 0]
                            for ox in range(lo):
                                dst[ox] = 0
                            if stride == 1:
                                for ox in range(lo, hi):
                                    dst[ox] = src[ox - pad + j]
                            else:
                                for ox in range(lo, hi):
                                    dst[ox] = src[ox * stride - pad + j]
                            for ox in range(hi, wo):
                                dst[ox] = 0
                        dst += wo


cdef void _col2im(const real[:, :, ::1] cols, real[:, :, :, ::1] x,
                  Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                  Py_ssize_t pad, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, lo, hi
    cdef const real* src
    cdef real* dst
    for n in range(N):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    _valid_cols(j, stride, pad, W, wo, &lo, &hi)
                    src = &cols[n, (c * kh + i) * kw + j, 0]
                    for oy in range(ho):
                        iy = oy * stride - pad + i
                        if iy >= 0 and iy < H:
                            dst = &x[n, c, iy, 0]
                            for ox in range(lo, hi):
                                dst[ox * stride - pad + j] += src[ox]
                        src += wo


cdef inline Py_ssize_t _out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    return (size + 2 * pad - k) // stride + 1


cdef void _im2col_f(const float[:, :, :, ::1] x, float[:, :, ::1] cols, Py_ssize_t kh, Py_ssize_t kw,
                    Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t ho, Py_ssize_t wo):
    with nogil:
        _im2col(x, cols, kh, kw, stride, pad, ho, wo)


cdef void _im2col_d(const double[:, :, :, ::1] x, double[:, :, ::1] cols, Py_ssize_t kh, Py_ssize_t kw,
                    Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t ho, Py_ssize_t wo):
    with nogil:
        _im2col(x, cols, kh, kw, stride, pad, ho, wo)


cdef void _col2im_f(const float[:, :, ::1] cols, float[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
                    Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t ho, Py_ssize_t wo):
    with nogil:
        _col2im(cols, x, kh, kw, stride, pad, ho, wo)


cdef void _col2im_d(const double[:, :, ::1] cols, double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
                    Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t ho, Py_ssize_t wo):
    with nogil:
        _col2im(cols, x, kh, kw, stride, pad, ho, wo)


def im2col(x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    x = np.ascontiguousarray(x)
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t ho = _out_size(x.shape[2], kh, stride, pad)
    cdef Py_ssize_t wo = _out_size(x.shape[3], kw, stride, pad)
    cols = np.empty((N, C * kh * kw, ho * wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col_f(x, cols, kh, kw, stride, pad, ho, wo)
    elif x.dtype == np.float64:
        _im2col_d(x, cols, kh, kw, stride, pad, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cols = np.ascontiguousarray(cols)
    N, C, H, W = shape
    cdef Py_ssize_t ho = _out_size(H, kh, stride, pad)
    cdef Py_ssize_t wo = _out_size(W, kw, stride, pad)
    x = np.zeros((N, C, H, W), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im_f(cols, x, kh, kw, stride, pad, ho, wo)
    elif cols.dtype == np.float64:
        _col2im_d(cols, x, kh, kw, stride, pad, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return x
