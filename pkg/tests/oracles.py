"""Independent reference implementations used to check the fast paths.

Everything here is deliberately naive: nested loops, scalar arithmetic,
exhaustive search.  The conv reference accumulates per output element in
(in-channel, kh, kw) order, which the production kernels also follow, so
comparisons can be exact.
"""

import numpy as np


def conv2d_ref(x, w, b, stride, pad, dilation):
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    oh = (h + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    ow = (wd + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    out = np.empty((n, oc, oh, ow), dtype=x.dtype)
    for i in range(n):
        for o in range(oc):
            for y in range(oh):
                for z in range(ow):
                    acc = b[o]
                    for ic in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                ih = y * stride - pad + p * dilation
                                iw = z * stride - pad + q * dilation
                                if 0 <= ih < h and 0 <= iw < wd:
                                    acc = acc + w[o, ic, p, q] * x[i, ic, ih, iw]
                    out[i, o, y, z] = acc
    return out


def maxpool_ref(x, kernel, stride):
    n, c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    for i in range(n):
        for ic in range(c):
            for y in range(oh):
                for z in range(ow):
                    best = None
                    bi = -1
                    for p in range(kernel):
                        for q in range(kernel):
                            ih, iw = y * stride + p, z * stride + q
                            v = x[i, ic, ih, iw]
                            if best is None or v > best:
                                best = v
                                bi = ih * w + iw
                    out[i, ic, y, z] = best
                    arg[i, ic, y, z] = bi
    return out, arg


def bilinear_resize_ref(img, new_h, new_w):
    """Half-pixel-center bilinear interpolation with edge clamping."""
    h, w = img.shape
    out = np.empty((new_h, new_w), dtype=np.float64)
    for oy in range(new_h):
        for ox in range(new_w):
            sy = min(max((oy + 0.5) * h / new_h - 0.5, 0), h - 1)
            sx = min(max((ox + 0.5) * w / new_w - 0.5, 0), w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[oy, ox] = (img[y0, x0] * (1 - fy) * (1 - fx)
                           + img[y0, x1] * (1 - fy) * fx
                           + img[y1, x0] * fy * (1 - fx)
                           + img[y1, x1] * fy * fx)
    return out


def numeric_grad(f, arr, indices=None, eps=1e-6):
    """Central finite differences of scalar f w.r.t. entries of arr."""
    flat = arr.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    grads = {}
    for i in indices:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        grads[i] = (fp - fm) / (2 * eps)
    return grads


def rel_err(a, b):
    return abs(a - b) / max(1e-12, abs(a) + abs(b))


def max_matching_bruteforce(adj, n_left):
    """Exhaustive maximum bipartite matching size by backtracking."""

    def go(u, used):
        if u == n_left:
            return 0
        best = go(u + 1, used)  # leave u unmatched
        for v in adj[u]:
            if v not in used:
                used.add(v)
                best = max(best, 1 + go(u + 1, used))
                used.remove(v)
        return best

    return go(0, set())


def scalar_stage_loss_ref(logits, gt, eta, lam):
    """Per-pixel scalar evaluation of the class-balanced cross entropy."""
    import math

    pos = neg = 0
    for y in np.asarray(gt).reshape(-1):
        if y == 0:
            neg += 1
        elif y > eta:
            pos += 1
    if pos == 0 and neg == 0:
        return 0.0, np.zeros_like(np.asarray(logits, dtype=np.float64))
    alpha = lam * pos / (pos + neg)
    beta = neg / (pos + neg)
    loss = 0.0
    grad = np.zeros_like(np.asarray(logits, dtype=np.float64))
    it = np.nditer(np.asarray(gt), flags=["multi_index"])
    for y in it:
        idx = it.multi_index
        xl = float(np.asarray(logits)[idx])
        p = 1.0 / (1.0 + math.exp(-xl))
        if y == 0:
            loss += alpha * (-math.log1p(-p) if p < 1 else 700.0)
            grad[idx] = alpha * p
        elif y > eta:
            loss += beta * (-math.log(p))
            grad[idx] = beta * (p - 1.0)
    return loss, grad
