"""Independent loop-based reference implementations used only by tests.

Deliberately written with plain nested loops and no shared code with the
engine's kernels.
"""

import numpy as np


def conv2d_loops(x, weights, stride=1, padding=0):
    n, c, h, w = x.shape
    f, _, kh, kw = weights.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, ch, i * stride + u, j * stride + v] \
                                    * weights[o, ch, u, v]
                    out[b, o, i, j] = acc
    return out


def linear_loops(x, weights, bias=None):
    n, d = x.shape
    k = weights.shape[0]
    out = np.zeros((n, k), dtype=np.float64)
    for b in range(n):
        for o in range(k):
            acc = 0.0
            for i in range(d):
                acc += x[b, i] * weights[o, i]
            if bias is not None:
                acc += bias[o]
            out[b, o] = acc
    return out


def global_average_pool_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c), dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[b, ch, i, j]
            out[b, ch] = acc / (h * w)
    return out


def max_pool_loops(x, k):
    n, c, h, w = x.shape
    ho, wo = (h - k) // k + 1, (w - k) // k + 1
    out = np.zeros((n, c, ho, wo), dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = -np.inf
                    for u in range(k):
                        for v in range(k):
                            best = max(best, x[b, ch, i * k + u, j * k + v])
                    out[b, ch, i, j] = best
    return out


def mean_abs_loops(values):
    total = 0.0
    for v in values:
        total += abs(float(v))
    return total / len(values)
