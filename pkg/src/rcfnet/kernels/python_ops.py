"""Pure-numpy implementations of the hot compute kernels.

These are the fallback used when the compiled extension is unavailable
(or when RCFNET_KERNELS=python).  The convolution accumulates one kernel
tap at a time in (in-channel, kh, kw) order so results are bit-identical
to the compiled kernels and to a naive nested-loop reference.
"""

import numpy as np


def conv_out_size(size, kernel, stride, pad, dilation):
    return (size + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1


def conv2d_forward(x, w, b, stride, pad, dilation):
    """Dilated cross-correlation plus per-channel bias.

    x: (N, C, H, W), w: (OC, C, kH, kW), b: (OC,).  Returns (N, OC, H', W').
    """
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    oh = conv_out_size(h, kh, stride, pad, dilation)
    ow = conv_out_size(wd, kw, stride, pad, dilation)

    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + wd] = x

    out = np.empty((n, oc, oh, ow), dtype=x.dtype)
    out[...] = b[None, :, None, None]
    for ic in range(c):
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, ic,
                           i * dilation:i * dilation + (oh - 1) * stride + 1:stride,
                           j * dilation:j * dilation + (ow - 1) * stride + 1:stride]
                out += w[None, :, ic, i, j, None, None] * patch[:, None, :, :]
    return out


def conv2d_backward(x, w, stride, pad, dilation, gy):
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    _, _, oh, ow = gy.shape

    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + wd] = x

    gb = gy.sum(axis=(0, 2, 3))
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            hs = slice(i * dilation, i * dilation + (oh - 1) * stride + 1, stride)
            ws = slice(j * dilation, j * dilation + (ow - 1) * stride + 1, stride)
            patch = xp[:, :, hs, ws]
            # gw[oc, ic] = sum_{n,h',w'} gy * patch
            gw[:, :, i, j] = np.tensordot(gy, patch, axes=([0, 2, 3], [0, 2, 3]))
            # gx contribution: route gy back through w
            spread = np.tensordot(gy, w[:, :, i, j], axes=([1], [0]))
            gxp[:, :, hs, ws] += spread.transpose(0, 3, 1, 2)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd]
    if pad > 0:
        gx = np.ascontiguousarray(gx)
    return gx, gw, gb


def maxpool_forward(x, kernel, stride):
    """Max pooling; returns output and flat (h*W + w) argmax indices.

    Ties break toward the smallest flat input index.
    """
    n, c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    sn, sc, sh, sw = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, oh, ow, kernel, kernel),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw))
    flat = win.reshape(n, c, oh, ow, kernel * kernel)
    # row-major window order == increasing flat input index, so the first
    # maximum found is the smallest-index one
    arg = flat.argmax(axis=4)
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    khs, kws = arg // kernel, arg % kernel
    hh = np.arange(oh)[None, None, :, None] * stride + khs
    ww = np.arange(ow)[None, None, None, :] * stride + kws
    argmax = (hh * w + ww).astype(np.int64)
    return np.ascontiguousarray(out), argmax


def maxpool_backward(x_shape, argmax, gy):
    """Scatter gy back to the argmax positions of the forward pass."""
    n, c, h, w = x_shape
    gx = np.zeros((n, c, h * w), dtype=gy.dtype)
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    np.add.at(gx, (nn, cc, argmax), gy)
    return gx.reshape(n, c, h, w)
