# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution primitives (hot-path backend).

Direct-loop cross-correlation kernels for NCHW tensors, specialized for
float32 and float64 via a fused type.  Inner loops run over contiguous
rows through raw pointers so the C compiler can vectorize them; the
accumulation order is fixed at build time, so results are deterministic
run to run.
"""

import numpy as np

ctypedef fused real:
    float
    double


def _forward_loop(real[:, :, :, ::1] xpad, real[:, :, :, ::1] w,
                  real[:, :, :, ::1] out, int stride):
    cdef Py_ssize_t n_batch = xpad.shape[0]
    cdef Py_ssize_t c1n = w.shape[1]
    cdef Py_ssize_t c2n = w.shape[0]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t n, c1, c2, i, j, oh, ow
    cdef real wv
    cdef real *orow
    cdef real *xrow
    with nogil:
        for n in range(n_batch):
            for c2 in range(c2n):
                for c1 in range(c1n):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[c2, c1, i, j]
                            for oh in range(ho):
                                orow = &out[n, c2, oh, 0]
                                xrow = &xpad[n, c1, oh * stride + i, j]
                                if stride == 1:
                                    for ow in range(wo):
                                        orow[ow] += wv * xrow[ow]
                                else:
                                    for ow in range(wo):
                                        orow[ow] += wv * xrow[ow * stride]


def _input_grad_loop(real[:, :, :, ::1] gy, real[:, :, :, ::1] w,
                     real[:, :, :, ::1] gxpad, int stride):
    cdef Py_ssize_t n_batch = gy.shape[0]
    cdef Py_ssize_t c2n = w.shape[0], c1n = w.shape[1]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t n, c1, c2, i, j, oh, ow
    cdef real wv
    cdef real *grow
    cdef real *gyrow
    with nogil:
        for n in range(n_batch):
            for c1 in range(c1n):
                for c2 in range(c2n):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[c2, c1, i, j]
                            for oh in range(ho):
                                grow = &gxpad[n, c1, oh * stride + i, j]
                                gyrow = &gy[n, c2, oh, 0]
                                if stride == 1:
                                    for ow in range(wo):
                                        grow[ow] += wv * gyrow[ow]
                                else:
                                    for ow in range(wo):
                                        grow[ow * stride] += wv * gyrow[ow]


def _weight_grad_loop(real[:, :, :, ::1] xpad, real[:, :, :, ::1] gy,
                      real[:, :, :, ::1] gw, int stride):
    cdef Py_ssize_t n_batch = xpad.shape[0]
    cdef Py_ssize_t c2n = gw.shape[0], c1n = gw.shape[1]
    cdef Py_ssize_t kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t n, c1, c2, i, j, oh, ow
    cdef real acc
    cdef real *gyrow
    cdef real *xrow
    with nogil:
        for c2 in range(c2n):
            for c1 in range(c1n):
                for i in range(kh):
                    for j in range(kw):
                        acc = 0
                        for n in range(n_batch):
                            for oh in range(ho):
                                gyrow = &gy[n, c2, oh, 0]
                                xrow = &xpad[n, c1, oh * stride + i, j]
                                if stride == 1:
                                    for ow in range(wo):
                                        acc += gyrow[ow] * xrow[ow]
                                else:
                                    for ow in range(wo):
                                        acc += gyrow[ow] * xrow[ow * stride]
                        gw[c2, c1, i, j] = acc


def _pad_nchw(x, int pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    # np.pad preserves the input layout, so force C order for the loops
    return np.ascontiguousarray(np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))))


def _check_args(got, expected, axis, int stride, int pad):
    from ..errors import ConfigurationError
    if got != expected:
        raise ConfigurationError(
            f"{axis} mismatch: data has {got}, kernel side expects {expected}")
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ConfigurationError(f"pad must be >= 0, got {pad}")


def corr_forward(x, w, int stride, int pad):
    from ..errors import ConfigurationError
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    _check_args(x.shape[1], w.shape[1], "channel", stride, pad)
    xpad = _pad_nchw(x, pad)
    hp, wp = xpad.shape[2], xpad.shape[3]
    if kh > hp or kw > wp:
        raise ConfigurationError(
            f"kernel {kh}x{kw} exceeds padded input extent {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((x.shape[0], w.shape[0], ho, wo), dtype=x.dtype)
    _forward_loop(xpad, np.ascontiguousarray(w), out, stride)
    return out


def corr_input_grad(gy, w, int stride, int pad, int height, int width):
    from ..errors import ConfigurationError
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    _check_args(gy.shape[1], w.shape[0], "channel", stride, pad)
    n, _, ho, wo = gy.shape
    hp, wp = height + 2 * pad, width + 2 * pad
    if stride * (ho - 1) + kh > hp or stride * (wo - 1) + kw > wp:
        raise ConfigurationError(
            f"scatter window {stride}*({ho}-1)+{kh} exceeds padded extent {hp}")
    gxpad = np.zeros((n, w.shape[1], hp, wp), dtype=gy.dtype)
    _input_grad_loop(np.ascontiguousarray(gy), np.ascontiguousarray(w),
                     gxpad, stride)
    if pad == 0:
        return gxpad
    return np.ascontiguousarray(
        gxpad[:, :, pad : pad + height, pad : pad + width])


def corr_weight_grad(x, gy, int stride, int pad, int kh, int kw):
    from ..errors import ConfigurationError
    _check_args(x.shape[0], gy.shape[0], "batch", stride, pad)
    xpad = _pad_nchw(x, pad)
    hp, wp = xpad.shape[2], xpad.shape[3]
    if kh > hp or kw > wp:
        raise ConfigurationError(
            f"kernel {kh}x{kw} exceeds padded input extent {hp}x{wp}")
    gw = np.zeros((gy.shape[1], x.shape[1], kh, kw), dtype=x.dtype)
    _weight_grad_loop(xpad, np.ascontiguousarray(gy), gw, stride)
    return gw
