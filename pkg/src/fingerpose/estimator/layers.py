"""NHWC layer primitives with hand-written backward passes."""

from __future__ import annotations

import numpy as np


def conv_output_size(n: int, kernel: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - kernel) // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int, pad: int):
    """Unfold (N, H, W, C) into rows of flattened (kernel, kernel, C) windows."""
    n, h, w, c = x.shape
    ho = conv_output_size(h, kernel, stride, pad)
    wo = conv_output_size(w, kernel, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, kernel, kernel, c), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    return cols.reshape(n * ho * wo, kernel * kernel * c), (ho, wo)


def col2im(dcols: np.ndarray, x_shape, kernel: int, stride: int, pad: int, out_hw) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add window gradients back to the input."""
    n, h, w, c = x_shape
    ho, wo = out_hw
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    d = dcols.reshape(n, ho, wo, kernel, kernel, c)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += d[:, :, :, i, j, :]
    return dxp[:, pad : pad + h, pad : pad + w, :]


def conv_forward(x, weight, bias, kernel, stride, pad):
    """``weight`` has shape (kernel * kernel * C_in, C_out)."""
    cols, (ho, wo) = im2col(x, kernel, stride, pad)
    out = cols @ weight + bias
    return out.reshape(x.shape[0], ho, wo, -1), (cols, x.shape, (ho, wo))


def conv_backward(dout, weight, cache, kernel, stride, pad, need_input_grad=True):
    cols, x_shape, out_hw = cache
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = cols.T @ d2
    db = d2.sum(axis=0)
    dx = None
    if need_input_grad:
        dx = col2im(d2 @ weight.T, x_shape, kernel, stride, pad, out_hw)
    return dx, dw, db
