"""Pure-numpy reference implementations of the convolution patch kernels.

These are the fallback backend for :mod:`mtl_lab.kernels`. The compiled
extension reproduces the exact same accumulation order, so both backends
return bitwise-identical results.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "fallback"


def im2col(x: np.ndarray, ksize: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (B, C, H, W) into patch columns (B, C*ksize*ksize, OH*OW).

    Column channel ordering is (c, ky, kx), matching the weight layout of
    a (C_out, C_in, ksize, ksize) convolution reshaped to 2D.
    """
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (ksize, ksize), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * ksize * ksize, oh * ow)
    return np.ascontiguousarray(cols)


def col2im(
    cols: np.ndarray,
    x_shape: tuple[int, int, int, int],
    ksize: int,
    stride: int,
    pad: int,
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the image grid.

    Overlapping patch contributions are accumulated in (ky, kx) order; the
    compiled backend mirrors this order so results match bit for bit.
    """
    b, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - ksize) // stride + 1
    ow = (wp - ksize) // stride + 1
    cols6 = cols.reshape(b, c, ksize, ksize, oh, ow)
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for ky in range(ksize):
        for kx in range(ksize):
            out[:, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride] += cols6[
                :, :, ky, kx
            ]
    if pad:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(out)
