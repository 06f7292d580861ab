"""Forward and backward kernels for the fixed layer menu.

Image kernels work on channels-last (N, H, W, C) arrays, flat ones on
(N, F). Weights keep the (out, in, k, k) / (in, out, k, k) layout.
Forward functions return the output together with a cache; backward
functions consume that cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYERNORM_EPS = 1e-5


def conv_out_size(size: int, kernel: int, stride: int) -> int:
    """Spatial output size of an unpadded convolution."""
    return (size - kernel) // stride + 1


def deconv_out_size(size: int, kernel: int, stride: int, output_padding: int = 0) -> int:
    return (size - 1) * stride + kernel + output_padding


def _im2col(x, kernel, stride, out_h=None, out_w=None):
    # (N, H, W, C) -> (N*Ho*Wo, k*k*C); channels innermost so the gather copies runs
    n, c = x.shape[0], x.shape[3]
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    if out_h is not None:
        win = win[:, :out_h, :out_w]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kernel * kernel * c)
    return cols, ho, wo


def _col2im(cols, out_shape, kernel, stride, in_h, in_w):
    # scatter-add inverse of _im2col; cols is (N, h, w, k, k, C)
    out = np.zeros(out_shape, dtype=cols.dtype)
    span_h = stride * (in_h - 1) + 1
    span_w = stride * (in_w - 1) + 1
    for i in range(kernel):
        for j in range(kernel):
            out[:, i:i + span_h:stride, j:j + span_w:stride] += cols[:, :, :, i, j]
    return out


def _kkc(w):
    # (A, B, k, k) -> (A, k*k*B) matching the im2col column order
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _flipped(w):
    # (A, B, k, k) -> (k*k*A, B), kernel reversed: full correlation == transposed conv at stride 1
    a, b, k, _ = w.shape
    return w[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(k * k * a, b)


def _full_correlation(x, w):
    # stride-1 transposed convolution as a gather: pad by k-1 and correlate with the flipped kernel
    k = w.shape[2]
    n = x.shape[0]
    xp = np.pad(x, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
    cols, ho, wo = _im2col(xp, k, 1)
    return (cols @ _flipped(w)).reshape(n, ho, wo, w.shape[1])


def _from_kkc(m, shape):
    a, b, k, _ = shape
    return m.reshape(a, k, k, b).transpose(0, 3, 1, 2)


def conv2d_forward(x, w, b, stride):
    """Unpadded cross-correlation on (N, H, W, C) input; ``w`` is (C_out, C_in, k, k)."""
    n = x.shape[0]
    cols, ho, wo = _im2col(x, w.shape[2], stride)
    out = cols @ _kkc(w).T
    out += b
    return out.reshape(n, ho, wo, w.shape[0]), (cols, x.shape)


def conv2d_backward(grad, cache, w, stride, need_input_grad=True):
    cols, x_shape = cache
    n, ho, wo, c_out = grad.shape
    k = w.shape[2]
    g = grad.reshape(-1, c_out)
    dw = _from_kkc(g.T @ cols, w.shape)
    db = g.sum(axis=0)
    dx = None
    if need_input_grad:
        if stride == 1:
            dx = _full_correlation(grad, w)
        else:
            dcols = (g @ _kkc(w)).reshape(n, ho, wo, k, k, x_shape[3])
            dx = _col2im(dcols, x_shape, k, stride, ho, wo)
    return dx, dw, db


def deconv2d_forward(x, w, b, stride, output_padding):
    """Transposed convolution on (N, H, W, C) input; ``w`` is (C_in, C_out, k, k)."""
    n, h, wd, c_in = x.shape
    _, c_out, k, _ = w.shape
    xm = x.reshape(-1, c_in)
    if stride == 1 and output_padding == 0:
        out = _full_correlation(x, w)
    else:
        cols = (xm @ _kkc(w)).reshape(n, h, wd, k, k, c_out)
        out_shape = (n, deconv_out_size(h, k, stride, output_padding),
                     deconv_out_size(wd, k, stride, output_padding), c_out)
        out = _col2im(cols, out_shape, k, stride, h, wd)
    out += b
    return out, (xm, x.shape)


def deconv2d_backward(grad, cache, w, stride, need_input_grad=True):
    xm, x_shape = cache
    n, h, wd, c_in = x_shape
    k = w.shape[2]
    gcols, _, _ = _im2col(grad, k, stride, h, wd)
    dw = _from_kkc(xm.T @ gcols, w.shape)
    db = grad.sum(axis=(0, 1, 2))
    dx = None
    if need_input_grad:
        dx = (gcols @ _kkc(w).T).reshape(n, h, wd, c_in)
    return dx, dw, db


def dense_forward(x, w, b):
    return x @ w + b, x


def dense_backward(grad, x, w, need_input_grad=True):
    dx = grad @ w.T if need_input_grad else None
    return dx, x.T @ grad, grad.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad, mask):
    return grad * mask


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(grad, y):
    return grad * (1.0 - y * y)


def layernorm_forward(x, gain, bias):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + LAYERNORM_EPS)
    xhat = centered * inv
    return xhat * gain + bias, (xhat, inv)


def layernorm_backward(grad, cache, gain):
    xhat, inv = cache
    d = xhat.shape[-1]
    dgain = (grad * xhat).sum(axis=0)
    dbias = grad.sum(axis=0)
    dxhat = grad * gain
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dgain, dbias
