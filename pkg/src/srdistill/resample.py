"""Separable bicubic resampling on numpy arrays.

Uses the classic 4-tap cubic convolution kernel (Catmull-Rom, a = -0.5)
at center-aligned sample positions with reflective border handling.
There is no antialias prefilter: the same 4 taps are used for both
directions, which keeps the operator simple enough to verify by hand
against a naive per-pixel loop.

All arithmetic runs in float64 regardless of input dtype; callers decide
the output dtype and value clamping.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_A = -0.5  # cubic convolution parameter


def cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Cubic convolution weight for (signed) distance t."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (_A + 2.0) * t3 - (_A + 3.0) * t2 + 1.0
    far = _A * t3 - 5.0 * _A * t2 + 8.0 * _A * t - 4.0 * _A
    out = np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))
    return out


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Map out-of-range indices into [0, n) by mirroring about the edges.

    Mirror does not repeat the border sample (period 2*(n-1)), matching
    numpy.pad(mode="reflect").
    """
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _resample_last_axis(arr: np.ndarray, out_size: int) -> np.ndarray:
    n = arr.shape[-1]
    # Center-aligned source coordinate of each output sample.
    x = (np.arange(out_size, dtype=np.float64) + 0.5) * (n / out_size) - 0.5
    base = np.floor(x).astype(np.int64)
    frac = x - base
    out = np.zeros(arr.shape[:-1] + (out_size,), dtype=np.float64)
    for k in (-1, 0, 1, 2):
        w = cubic_kernel(frac - k)
        idx = reflect_index(base + k, n)
        out += arr[..., idx] * w
    return out


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the trailing two axes of ``img`` to (out_h, out_w).

    Accepts any number of leading axes. Returns float64.
    """
    img = np.asarray(img)
    if img.ndim < 2:
        raise ShapeError(f"bicubic_resize needs at least 2 axes, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"invalid output size ({out_h}, {out_w})")
    work = img.astype(np.float64, copy=False)
    work = _resample_last_axis(np.swapaxes(work, -1, -2), out_h)
    work = _resample_last_axis(np.swapaxes(work, -1, -2), out_w)
    return work
