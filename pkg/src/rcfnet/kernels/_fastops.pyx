# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels.

Accumulation order in conv2d_forward matches python_ops (per output
element: bias first, then taps in (in-channel, kh, kw) order), so both
backends produce bit-identical forward results.
"""

import numpy as np

from cython cimport floating


def _tap_ranges(out_size, in_size, kernel, stride, pad, dilation):
    """Valid output index range [lo, hi) for each kernel tap offset."""
    lo = np.empty(kernel, dtype=np.int64)
    hi = np.empty(kernel, dtype=np.int64)
    for t in range(kernel):
        shift = pad - t * dilation
        lo[t] = max(0, -((-shift) // stride))
        hi[t] = max(lo[t], min(out_size, (in_size - 1 + shift) // stride + 1))
    return lo, hi


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   floating[::1] b, int stride, int pad, int dilation):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oc = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - dilation * (kw - 1) - 1) // stride + 1

    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, oc, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr

    lo_y_arr, hi_y_arr = _tap_ranges(oh, h, kh, stride, pad, dilation)
    lo_x_arr, hi_x_arr = _tap_ranges(ow, wd, kw, stride, pad, dilation)
    cdef long long[::1] lo_y = lo_y_arr, hi_y = hi_y_arr
    cdef long long[::1] lo_x = lo_x_arr, hi_x = hi_x_arr

    cdef Py_ssize_t i, o, y, xx, ic, p, q, ih, iw0
    cdef floating wv, bias
    # taps applied plane-at-a-time in (ic, p, q) order: every output
    # element accumulates bias first, then taps in the same order as the
    # python backend, so the two stay bit-identical
    for i in range(n):
        for o in range(oc):
            bias = b[o]
            for y in range(oh):
                for xx in range(ow):
                    out[i, o, y, xx] = bias
            for ic in range(c):
                for p in range(kh):
                    for q in range(kw):
                        wv = w[o, ic, p, q]
                        iw0 = q * dilation - pad
                        for y in range(lo_y[p], hi_y[p]):
                            ih = y * stride - pad + p * dilation
                            for xx in range(lo_x[q], hi_x[q]):
                                out[i, o, y, xx] = (out[i, o, y, xx]
                                                    + wv * x[i, ic, ih,
                                                             xx * stride + iw0])
    return out_arr


def conv2d_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    int stride, int pad, int dilation,
                    floating[:, :, :, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oc = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]

    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((n, c, h, wd), dtype=dtype)
    gw_arr = np.zeros((oc, c, kh, kw), dtype=dtype)
    gb_arr = np.zeros(oc, dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, :, ::1] gw = gw_arr
    cdef floating[::1] gb = gb_arr

    lo_y_arr, hi_y_arr = _tap_ranges(oh, h, kh, stride, pad, dilation)
    lo_x_arr, hi_x_arr = _tap_ranges(ow, wd, kw, stride, pad, dilation)
    cdef long long[::1] lo_y = lo_y_arr, hi_y = hi_y_arr
    cdef long long[::1] lo_x = lo_x_arr, hi_x = hi_x_arr

    cdef Py_ssize_t i, o, y, xx, ic, p, q, ih, iw0
    cdef floating g, wv, wacc
    for i in range(n):
        for o in range(oc):
            for y in range(oh):
                for xx in range(ow):
                    gb[o] += gy[i, o, y, xx]
            for ic in range(c):
                for p in range(kh):
                    for q in range(kw):
                        wv = w[o, ic, p, q]
                        wacc = 0
                        iw0 = q * dilation - pad
                        for y in range(lo_y[p], hi_y[p]):
                            ih = y * stride - pad + p * dilation
                            # two clean passes so each can vectorize: a
                            # reduction for gw and a saxpy-style gx update
                            for xx in range(lo_x[q], hi_x[q]):
                                wacc = wacc + (gy[i, o, y, xx]
                                               * x[i, ic, ih, xx * stride + iw0])
                            for xx in range(lo_x[q], hi_x[q]):
                                gx[i, ic, ih, xx * stride + iw0] += (
                                    gy[i, o, y, xx] * wv)
                        gw[o, ic, p, q] += wacc
    return gx_arr, gw_arr, gb_arr


def maxpool_forward(floating[:, :, :, ::1] x, int kernel, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - kernel) // stride + 1
    cdef Py_ssize_t ow = (w - kernel) // stride + 1

    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] arg = arg_arr

    cdef Py_ssize_t i, ic, y, xx, p, q, ih, iw
    cdef floating best, v
    cdef Py_ssize_t bi
    for i in range(n):
        for ic in range(c):
            for y in range(oh):
                for xx in range(ow):
                    best = x[i, ic, y * stride, xx * stride]
                    bi = y * stride * w + xx * stride
                    for p in range(kernel):
                        ih = y * stride + p
                        for q in range(kernel):
                            iw = xx * stride + q
                            v = x[i, ic, ih, iw]
                            if v > best:
                                best = v
                                bi = ih * w + iw
                    out[i, ic, y, xx] = best
                    arg[i, ic, y, xx] = bi
    return out_arr, arg_arr


def maxpool_backward(x_shape, long long[:, :, :, ::1] argmax,
                     floating[:, :, :, ::1] gy):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]

    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr

    cdef Py_ssize_t i, ic, y, xx
    cdef long long fl
    for i in range(n):
        for ic in range(c):
            for y in range(oh):
                for xx in range(ow):
                    fl = argmax[i, ic, y, xx]
                    gx[i, ic, fl // w, fl % w] += gy[i, ic, y, xx]
    return gx_arr
