"""im2col / col2im kernels for strided, zero-padded 2-D convolution.

Weights use the (out_channels, in_channels, k, k) layout for ``conv2d``.
``conv_transpose2d`` reuses the same weight tensor as the conv2d it is the
adjoint of, so its weight shape is (in_channels, out_channels, k, k) from
the transposed op's point of view.

Column matrices are channel-major, (C*k*k, N*Ho*Wo), which keeps every
matmul result in a layout that needs at most an output-sized transpose.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """Unfold ``x`` (N, C, H, W) into a (C*k*k, N*Ho*Wo) matrix."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)
    return cols, ho, wo


def col2im(cols: np.ndarray, x_shape: tuple[int, ...], k: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to an (N, C, H, W) array."""
    n, c, h, w = x_shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    cols6 = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    hs, ws = stride * ho, stride * wo
    # fixed loop order keeps the summation order (and so the bits) stable
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + hs:stride, j:j + ws:stride] += cols6[:, i, j].transpose(1, 0, 2, 3)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def _channel_major(a: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (C, N*H*W)."""
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3)).reshape(a.shape[1], -1)


def _from_channel_major(a: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(a.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    o, _, k, _ = w.shape
    cols, ho, wo = im2col(x, k, stride, padding)
    out = w.reshape(o, -1) @ cols
    return _from_channel_major(out, x.shape[0], ho, wo), cols


def conv2d_backward(gout, x_shape, w, cols, stride, padding, need_x=True, need_w=True):
    o, _, k, _ = w.shape
    g = _channel_major(gout)
    gx = gw = None
    if need_w:
        gw = (g @ cols.T).reshape(w.shape)
    if need_x:
        gx = col2im(w.reshape(o, -1).T @ g, x_shape, k, stride, padding)
    return gx, gw


def conv_transpose2d_forward(y: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    o, c, k, _ = w.shape
    n, _, hi, wi = y.shape
    out_shape = (
        n,
        c,
        conv_transpose_output_size(hi, k, stride, padding),
        conv_transpose_output_size(wi, k, stride, padding),
    )
    return col2im(w.reshape(o, -1).T @ _channel_major(y), out_shape, k, stride, padding)


def conv_transpose2d_backward(gout, y, w, stride, padding, need_y=True, need_w=True):
    o, _, k, _ = w.shape
    cols, ho, wo = im2col(gout, k, stride, padding)
    gy = gw = None
    if need_y:
        gy = _from_channel_major(w.reshape(o, -1) @ cols, y.shape[0], ho, wo)
    if need_w:
        gw = (_channel_major(y) @ cols.T).reshape(w.shape)
    return gy, gw
