"""Separable bicubic resampling.

Cubic convolution kernel with a = -0.5, center-aligned sample positions
(src = (dst + 0.5)/scale - 0.5) and edge-clamp boundaries. Downscaling
stretches the kernel by the inverse scale and renormalizes the weights
(antialiasing). Outputs are evaluated as ref + sum(w_i * (x_i - ref)),
which keeps constants and the factor-1 identity bit-exact regardless of
how the weight sum rounds.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

KERNEL_A = -0.5
KERNEL_SUPPORT = 2.0


def cubic_kernel(x, a: float = KERNEL_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _axis_weights(in_n: int, out_n: int, antialias: bool):
    """Tap indices (clipped), weights, and the reference tap per output sample."""
    if out_n < 1:
        raise ConfigurationError(f"target size must be positive, got {out_n}")
    ratio = out_n / in_n
    src = (np.arange(out_n, dtype=np.float64) + 0.5) / ratio - 0.5
    if antialias and ratio < 1.0:
        kscale = ratio
        radius = KERNEL_SUPPORT / ratio
    else:
        kscale = 1.0
        radius = KERNEL_SUPPORT
    left = np.floor(src - radius).astype(np.int64) + 1
    taps = int(np.ceil(2.0 * radius)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    w = cubic_kernel((src[:, None] - idx) * kscale) * kscale
    w = w / w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_n - 1)
    ref = np.argmax(np.abs(w), axis=1)
    return idx, w, ref


def _resize_axis(img: np.ndarray, out_n: int, axis: int, antialias: bool) -> np.ndarray:
    in_n = img.shape[axis]
    if in_n == out_n:
        return img
    idx, w, ref = _axis_weights(in_n, out_n, antialias)
    moved = np.moveaxis(img, axis, -1)
    gathered = moved[..., idx]
    refs = moved[..., idx[np.arange(out_n), ref]]
    out = refs + np.einsum("...ot,ot->...o", gathered - refs[..., None], w)
    return np.moveaxis(out, -1, axis)


def resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize an (H,W) or (H,W,C) array to (out_h, out_w)."""
    if img.ndim not in (2, 3):
        raise ConfigurationError(f"expected 2-d or 3-d image, got shape {img.shape}")
    img = np.asarray(img, dtype=np.float64)
    out = _resize_axis(img, out_h, 0, antialias)
    out = _resize_axis(out, out_w, 1, antialias)
    return np.ascontiguousarray(out)


def bicubic_up(img: np.ndarray, scale: int) -> np.ndarray:
    if scale < 1:
        raise ConfigurationError(f"upscale factor must be >= 1, got {scale}")
    return resize(img, img.shape[0] * scale, img.shape[1] * scale)


def bicubic_down(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[:2]
    if scale < 1 or h % scale or w % scale:
        raise ConfigurationError(
            f"image size {h}x{w} not divisible by downscale factor {scale}")
    return resize(img, h // scale, w // scale)


def rescale(img: np.ndarray, factor: float) -> np.ndarray:
    """Whole-image rescale by a real factor (used by augmentation)."""
    if factor <= 0:
        raise ConfigurationError(f"scale factor must be positive, got {factor}")
    h, w = img.shape[:2]
    out_h = max(1, int(np.floor(h * factor + 0.5)))
    out_w = max(1, int(np.floor(w * factor + 0.5)))
    return resize(img, out_h, out_w)
