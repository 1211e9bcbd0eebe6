"""Pure-numpy convolution primitives (fallback backend).

All three kernels operate on NCHW float32/float64 arrays and implement plain
cross-correlation (no kernel flip).  They are the only compute-heavy loops in
the toolkit; everything else stays in numpy elementwise land.

Implementation: zero-pad, expose sliding windows with ``sliding_window_view``
(no copy) and contract with ``tensordot`` so the heavy lifting lands in BLAS.
Deterministic for a fixed BLAS thread count.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError


def _pad_nchw(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _check_args(got, expected, axis, stride, pad):
    if got != expected:
        raise ConfigurationError(
            f"{axis} mismatch: data has {got}, kernel side expects {expected}")
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ConfigurationError(f"pad must be >= 0, got {pad}")


def _check_geometry(hp, wp, kh, kw):
    if kh > hp or kw > wp:
        raise ConfigurationError(
            f"kernel {kh}x{kw} exceeds padded input extent {hp}x{wp}"
        )


def _windows(xpad, kh, kw, stride):
    # (N, C, Hp, Wp) -> (N, C, Ho, Wo, kh, kw)
    win = sliding_window_view(xpad, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride, :, :]


def corr_forward(x, w, stride, pad):
    """Cross-correlate x[N,C1,H,W] with w[C2,C1,kh,kw] -> y[N,C2,Ho,Wo]."""
    c2, c1, kh, kw = w.shape
    _check_args(x.shape[1], c1, "channel", stride, pad)
    xpad = _pad_nchw(x, pad)
    _check_geometry(xpad.shape[2], xpad.shape[3], kh, kw)
    win = _windows(xpad, kh, kw, stride)
    y = np.tensordot(win, w, axes=[(1, 4, 5), (1, 2, 3)])
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def corr_input_grad(gy, w, stride, pad, height, width):
    """Adjoint of corr_forward w.r.t. its input; also the transposed-conv map.

    gy[N,C2,Ho,Wo], w[C2,C1,kh,kw] -> gx[N,C1,height,width].
    """
    n, _, ho, wo = gy.shape
    c2, c1, kh, kw = w.shape
    _check_args(gy.shape[1], c2, "channel", stride, pad)
    hp, wp = height + 2 * pad, width + 2 * pad
    if stride * (ho - 1) + kh > hp or stride * (wo - 1) + kw > wp:
        raise ConfigurationError(
            f"scatter window {stride}*({ho}-1)+{kh} exceeds padded extent {hp}"
        )
    # (N,C2,Ho,Wo) x (C2,C1,kh,kw) -> (N,Ho,Wo,C1,kh,kw)
    g = np.tensordot(gy, w, axes=[(1,), (0,)])
    gxpad = np.zeros((n, c1, hp, wp), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxpad[:, :, i : i + stride * (ho - 1) + 1 : stride,
                  j : j + stride * (wo - 1) + 1 : stride] += \
                g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad == 0:
        return gxpad
    return np.ascontiguousarray(gxpad[:, :, pad : pad + height, pad : pad + width])


def corr_weight_grad(x, gy, stride, pad, kh, kw):
    """Adjoint of corr_forward w.r.t. the kernel.

    x[N,C1,H,W], gy[N,C2,Ho,Wo] -> gw[C2,C1,kh,kw].
    """
    _check_args(x.shape[0], gy.shape[0], "batch", stride, pad)
    xpad = _pad_nchw(x, pad)
    _check_geometry(xpad.shape[2], xpad.shape[3], kh, kw)
    win = _windows(xpad, kh, kw, stride)
    gw = np.tensordot(gy, win, axes=[(0, 2, 3), (0, 2, 3)])
    return np.ascontiguousarray(gw)
