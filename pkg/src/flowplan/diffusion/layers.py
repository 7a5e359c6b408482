"""Primitive layers with hand-written backward passes.

Videos flow through the network as (C, N, H, W) float64 arrays: spatial
convolutions treat the frame axis N as a batch, temporal convolutions mix
along N at every spatial location. Everything is same-padded, stride 1;
resolution changes happen in explicit pool/upsample layers.

Each op returns (output, cache); the matching *_backward takes the
upstream gradient plus the cache and returns gradients for its inputs and
parameters. Keeping the pairs adjacent makes the chain rule auditable.
"""

import numpy as np


def conv2d(x, w, b):
    """Spatial convolution over (H, W), frames as batch.

    x: (C_in, N, H, W),  w: (C_out, C_in, k, k),  b: (C_out,)
    """
    c_out, c_in, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    _, n, h, wd = x.shape
    y = np.zeros((c_out, n, h, wd))
    for dy in range(k):
        for dx in range(k):
            y += np.einsum("oi,inhw->onhw", w[:, :, dy, dx],
                           xp[:, :, dy:dy + h, dx:dx + wd], optimize=True)
    return y + b[:, None, None, None], (x, w)


def conv2d_backward(dy, cache):
    x, w = cache
    c_out, c_in, k, _ = w.shape
    pad = k // 2
    _, n, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for dy_ in range(k):
        for dx_ in range(k):
            patch = xp[:, :, dy_:dy_ + h, dx_:dx_ + wd]
            dw[:, :, dy_, dx_] = np.einsum("onhw,inhw->oi", dy, patch, optimize=True)
            dxp[:, :, dy_:dy_ + h, dx_:dx_ + wd] += np.einsum(
                "oi,onhw->inhw", w[:, :, dy_, dx_], dy, optimize=True)
    db = dy.sum(axis=(1, 2, 3))
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


def conv1d_time(x, w, b):
    """Temporal convolution along the frame axis at every pixel.

    x: (C_in, N, H, W),  w: (C_out, C_in, k_t),  b: (C_out,)
    """
    c_out, c_in, kt = w.shape
    pad = kt // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0), (0, 0)))
    _, n, h, wd = x.shape
    y = np.zeros((c_out, n, h, wd))
    for dt in range(kt):
        y += np.einsum("oi,inhw->onhw", w[:, :, dt],
                       xp[:, dt:dt + n], optimize=True)
    return y + b[:, None, None, None], (x, w)


def conv1d_time_backward(dy, cache):
    x, w = cache
    c_out, c_in, kt = w.shape
    pad = kt // 2
    _, n, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for dt in range(kt):
        patch = xp[:, dt:dt + n]
        dw[:, :, dt] = np.einsum("onhw,inhw->oi", dy, patch, optimize=True)
        dxp[:, dt:dt + n] += np.einsum("oi,onhw->inhw", w[:, :, dt], dy, optimize=True)
    dx = dxp[:, pad:pad + n] if pad else dxp
    return dx, dw, db_sum(dy)


def db_sum(dy):
    return dy.sum(axis=(1, 2, 3))


def silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, (x, s)


def silu_backward(dy, cache):
    x, s = cache
    return dy * s * (1.0 + x * (1.0 - s))


def avg_pool2(x):
    """2x2 average pooling over (H, W)."""
    c, n, h, w = x.shape
    y = x.reshape(c, n, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return y, (h, w)


def avg_pool2_backward(dy, cache):
    h, w = cache
    dx = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) / 4.0
    return dx


def upsample2(x):
    """Nearest-neighbor 2x upsampling over (H, W)."""
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3), x.shape


def upsample2_backward(dy, cache):
    c, n, h, w = cache
    return dy.reshape(c, n, h, 2, w, 2).sum(axis=(3, 5))
