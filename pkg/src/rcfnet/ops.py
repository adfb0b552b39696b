"""Differentiable primitives over Tensors.

Forward ops return new Tensors; the *_backward counterparts compute
analytic gradients and accumulate them into existing grad buffers of the
inputs/parameters involved (callers zero grads between iterations).
"""

import math

import numpy as np

from . import kernels
from .tensor import ConvParams, ShapeError, Tensor


def conv2d(input, params):
    """Dilated cross-correlation plus bias; see ConvParams for geometry."""
    n, c, h, w = input.dims
    if c != params.in_channels:
        raise ShapeError(
            f"input channel axis has {c} channels, conv expects {params.in_channels}")
    kh, kw = params.weights.dims[2], params.weights.dims[3]
    oh = kernels.conv_out_size(h, kh, params.stride, params.pad, params.dilation)
    ow = kernels.conv_out_size(w, kw, params.stride, params.pad, params.dilation)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"non-positive conv output size ({oh}, {ow}) for input ({h}, {w})")
    out = kernels.conv2d_forward(
        np.ascontiguousarray(input.data),
        np.ascontiguousarray(params.weights.data),
        np.ascontiguousarray(params.bias.values),
        params.stride, params.pad, params.dilation)
    return Tensor(out)


def conv2d_backward(input, params, grad_out):
    """Backprop through conv2d; accumulates into input/params grads."""
    g = grad_out.data if isinstance(grad_out, Tensor) else np.asarray(grad_out)
    kh, kw = params.weights.dims[2], params.weights.dims[3]
    n, c, h, w = input.dims
    oh = kernels.conv_out_size(h, kh, params.stride, params.pad, params.dilation)
    ow = kernels.conv_out_size(w, kw, params.stride, params.pad, params.dilation)
    if g.shape != (n, params.out_channels, oh, ow):
        raise ShapeError(
            f"grad_out shape {g.shape} does not match conv output "
            f"({n}, {params.out_channels}, {oh}, {ow})")
    gx, gw, gb = kernels.conv2d_backward(
        np.ascontiguousarray(input.data),
        np.ascontiguousarray(params.weights.data),
        params.stride, params.pad, params.dilation,
        np.ascontiguousarray(g))
    input.accumulate_grad(gx)
    params.weights.accumulate_grad(gw)
    params.bias.accumulate_grad(gb.reshape(params.bias.dims))
    return Tensor(gx), Tensor(gw), gb


def max_pool2d(input, kernel, stride):
    """Max pooling with argmax map; ties go to the smallest flat index."""
    if kernel < 1 or stride < 1:
        raise ShapeError(f"pool kernel/stride must be >= 1, got {kernel}/{stride}")
    h, w = input.dims[2], input.dims[3]
    if h < kernel or w < kernel:
        raise ShapeError(f"input ({h}, {w}) smaller than pool kernel {kernel}")
    out, argmax = kernels.maxpool_forward(
        np.ascontiguousarray(input.data), kernel, stride)
    return Tensor(out), argmax


def max_pool2d_backward(input, argmax, grad_out):
    g = grad_out.data if isinstance(grad_out, Tensor) else np.asarray(grad_out)
    if g.shape != argmax.shape:
        raise ShapeError(
            f"grad_out shape {g.shape} does not match pool output {argmax.shape}")
    gx = kernels.maxpool_backward(
        input.dims, np.ascontiguousarray(argmax), np.ascontiguousarray(g))
    input.accumulate_grad(gx)
    return Tensor(gx)


def bilinear_kernel_1d(factor, dtype=np.float64):
    """Interpolation weights of the fixed upsampling kernel for one axis."""
    size = 2 * factor - factor % 2
    if size % 2 == 1:
        center = factor - 1.0
    else:
        center = factor - 0.5
    i = np.arange(size, dtype=np.float64)
    return (1.0 - np.abs(i - center) / factor).astype(dtype)


def _upsample_geometry(factor):
    size = 2 * factor - factor % 2
    pad = math.ceil((factor - 1) / 2)
    return size, pad


def _upsample_raw_dims(h, w, factor):
    return h * factor, w * factor


def bilinear_upsample(input, factor, target_h, target_w):
    """Channel-independent fixed-kernel upsampling, center-cropped to target.

    Implemented as a transposed convolution: zero-stuff by the factor,
    then correlate with the separable bilinear kernel.  The input is
    edge-replicated by one sample first so the kernel's partition of
    unity holds at the borders too (constant maps stay constant); the
    interior is identical to the plain transposed convolution.
    """
    n, c, h, w = input.dims
    rh, rw = _upsample_raw_dims(h, w, factor)
    if factor == 1:
        if target_h > rh or target_w > rw:
            raise ShapeError(
                f"target ({target_h}, {target_w}) exceeds raw size ({rh}, {rw})")
        oy = (rh - target_h) // 2
        ox = (rw - target_w) // 2
        return Tensor(input.data[:, :, oy:oy + target_h, ox:ox + target_w].copy())
    # the h*factor block starting at `factor` corresponds to the unpadded
    # input; targets slightly beyond it (odd input sizes after floor-mode
    # pooling) extend symmetrically into the replicated margin
    oy = factor + (rh - target_h) // 2
    ox = factor + (rw - target_w) // 2
    r2h, r2w = (h + 2) * factor, (w + 2) * factor
    if oy < 0 or ox < 0 or oy + target_h > r2h or ox + target_w > r2w:
        raise ShapeError(
            f"target ({target_h}, {target_w}) exceeds raw upsampled size ({rh}, {rw})")
    size, pad = _upsample_geometry(factor)
    k1 = bilinear_kernel_1d(factor, input.dtype)
    kern = np.ascontiguousarray(np.outer(k1, k1)[None, None])
    xr = np.pad(input.data.reshape(n * c, 1, h, w),
                ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    h2, w2 = h + 2, w + 2
    stuffed = np.zeros((n * c, 1, (h2 - 1) * factor + 1, (w2 - 1) * factor + 1),
                       dtype=input.dtype)
    stuffed[:, :, ::factor, ::factor] = xr
    raw = kernels.conv2d_forward(
        stuffed, kern, np.zeros(1, dtype=input.dtype), 1, size - 1 - pad, 1)
    raw = raw.reshape(n, c, raw.shape[2], raw.shape[3])
    return Tensor(np.ascontiguousarray(raw[:, :, oy:oy + target_h, ox:ox + target_w]))


def bilinear_upsample_backward(input, factor, target_h, target_w, grad_out):
    """Adjoint of bilinear_upsample; accumulates into input.grad."""
    g = grad_out.data if isinstance(grad_out, Tensor) else np.asarray(grad_out)
    n, c, h, w = input.dims
    rh, rw = _upsample_raw_dims(h, w, factor)
    if g.shape != (n, c, target_h, target_w):
        raise ShapeError(f"grad_out shape {g.shape} does not match upsample target")
    if factor == 1:
        gx = np.zeros_like(input.data)
        oy = (rh - target_h) // 2
        ox = (rw - target_w) // 2
        gx[:, :, oy:oy + target_h, ox:ox + target_w] = g
        input.accumulate_grad(gx)
        return Tensor(gx)
    size, pad = _upsample_geometry(factor)
    k1 = bilinear_kernel_1d(factor, input.dtype)
    kern = np.ascontiguousarray(np.outer(k1, k1)[None, None])
    h2, w2 = h + 2, w + 2
    r2h, r2w = h2 * factor, w2 * factor
    graw = np.zeros((n * c, 1, r2h, r2w), dtype=g.dtype)
    oy = factor + (rh - target_h) // 2
    ox = factor + (rw - target_w) // 2
    graw[:, :, oy:oy + target_h, ox:ox + target_w] = g.reshape(n * c, 1,
                                                               target_h, target_w)
    sh, sw = (h2 - 1) * factor + 1, (w2 - 1) * factor + 1
    dummy = np.zeros((n * c, 1, sh, sw), dtype=g.dtype)
    gstuffed, _, _ = kernels.conv2d_backward(
        dummy, kern, 1, size - 1 - pad, 1, np.ascontiguousarray(graw))
    gpad = gstuffed[:, :, ::factor, ::factor]
    # fold the replicate-pad adjoint back onto the edge samples
    gx = np.ascontiguousarray(gpad[:, :, 1:-1, 1:-1])
    gx[:, :, 0, :] += gpad[:, :, 0, 1:-1]
    gx[:, :, -1, :] += gpad[:, :, -1, 1:-1]
    gx[:, :, :, 0] += gpad[:, :, 1:-1, 0]
    gx[:, :, :, -1] += gpad[:, :, 1:-1, -1]
    gx[:, :, 0, 0] += gpad[:, :, 0, 0]
    gx[:, :, 0, -1] += gpad[:, :, 0, -1]
    gx[:, :, -1, 0] += gpad[:, :, -1, 0]
    gx[:, :, -1, -1] += gpad[:, :, -1, -1]
    gx = gx.reshape(n, c, h, w)
    input.accumulate_grad(gx)
    return Tensor(gx)


def sigmoid(input):
    x = input.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out)


def sigmoid_backward(output, grad_out):
    g = grad_out.data if isinstance(grad_out, Tensor) else np.asarray(grad_out)
    s = output.data
    return Tensor(g * s * (1.0 - s))


def relu(input):
    return Tensor(np.maximum(input.data, 0))


def relu_backward(input, grad_out):
    g = grad_out.data if isinstance(grad_out, Tensor) else np.asarray(grad_out)
    return Tensor(g * (input.data > 0))


def eltwise_add(*tensors):
    """Elementwise sum of identically shaped tensors."""
    if not tensors:
        raise ShapeError("eltwise_add needs at least one operand")
    dims = tensors[0].dims
    for t in tensors[1:]:
        if t.dims != dims:
            raise ShapeError(f"eltwise_add operand dims {t.dims} != {dims}")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data
    return Tensor(out)


def concat_channels(tensors):
    """Concatenate along the channel axis; N, H, W must agree."""
    if not tensors:
        raise ShapeError("concat_channels needs at least one operand")
    n, _, h, w = tensors[0].dims
    for t in tensors[1:]:
        tn, _, th, tw = t.dims
        if (tn, th, tw) != (n, h, w):
            raise ShapeError(
                f"concat_channels operand (N,H,W)=({tn},{th},{tw}) != ({n},{h},{w})")
    return Tensor(np.concatenate([t.data for t in tensors], axis=1))


def resize_bilinear_image(image, new_h, new_w):
    """Bilinear resize of an (H, W) or (C, H, W) image, half-pixel centers."""
    img = np.asarray(image)
    h, w = img.shape[-2], img.shape[-1]
    if new_h < 1 or new_w < 1:
        raise ShapeError(f"resize target must be positive, got ({new_h}, {new_w})")
    if (new_h, new_w) == (h, w):
        return img.copy()
    ys = np.clip((np.arange(new_h) + 0.5) * (h / new_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(new_w) + 0.5) * (w / new_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = img[..., y0[:, None], x0[None, :]]
    b = img[..., y0[:, None], x1[None, :]]
    c = img[..., y1[:, None], x0[None, :]]
    d = img[..., y1[:, None], x1[None, :]]
    out = (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
           + c * fy * (1 - fx) + d * fy * fx)
    return out.astype(img.dtype)


def sgd_step(params, lr, momentum=0.0, weight_decay=0.0, lr_multipliers=None):
    """One momentum-SGD update over a list of parameter Tensors.

    v <- momentum * v - lr * (grad + weight_decay * param)
    param <- param + v; grads are zeroed afterwards.
    """
    if lr_multipliers is None:
        lr_multipliers = [1.0] * len(params)
    if len(lr_multipliers) != len(params):
        raise ValueError("lr_multipliers length does not match params")
    for p, mult in zip(params, lr_multipliers):
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
        if p.velocity is None:
            p.velocity = np.zeros_like(p.data)
        step = (p.grad + weight_decay * p.data).astype(p.data.dtype)
        p.velocity[...] = momentum * p.velocity - (lr * mult) * step
        p.data += p.velocity
    for p in params:
        p.zero_grad()
