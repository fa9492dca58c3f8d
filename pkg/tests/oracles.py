"""Independent reference computations used by the tests.

Everything here is plain numpy/python loops in float64 and never calls into
the engine, so it can check the engine's fast paths.
"""
import math

import numpy as np


def central_diff(f, x, step=1e-3):
    """Gradient of scalar ``f`` at ``x`` (float64 array) by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(b), np.linalg.norm(a), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def naive_conv2d(x, w, b, groups=1, padding=0, stride=1):
    n, c_in, h, wd = x.shape
    c_out, c_g, k, _ = w.shape
    xp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    per_group = c_out // groups
    for bi in range(n):
        for o in range(c_out):
            gidx = o // per_group
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(c_g):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (w[o, c, ki, kj]
                                        * xp[bi, gidx * c_g + c, i * stride + ki, j * stride + kj])
                    out[bi, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def naive_matmul(a, b):
    n, m = a.shape
    m2, p = b.shape
    assert m == m2
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            out[i, j] = sum(a[i, k] * b[k, j] for k in range(m))
    return out


def bilinear_sample(img, out_h, out_w):
    """Half-pixel-center bilinear resize of a 2-d array, one output pixel at a time."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for oi in range(out_h):
        sy = min(max((oi + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for oj in range(out_w):
            sx = min(max((oj + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[oi, oj] = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
                           + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    return out


def loop_mean(a):
    flat = np.asarray(a, dtype=np.float64).reshape(-1)
    total = 0.0
    for v in flat:
        total += v
    return total / flat.size


def loop_std_mean(samples):
    """Mean over locations of the unbiased std across the leading axis."""
    s = np.asarray(samples, dtype=np.float64)
    n = s.shape[0]
    flat = s.reshape(n, -1)
    acc = 0.0
    for j in range(flat.shape[1]):
        m = sum(flat[i, j] for i in range(n)) / n
        var = sum((flat[i, j] - m) ** 2 for i in range(n)) / (n - 1)
        acc += math.sqrt(var)
    return acc / flat.shape[1]


def wasserstein_1d_sorted(a, b):
    """Exact W1 between two equal-size empirical 1-d distributions by brute force.

    Tries every permutation for tiny inputs, otherwise uses the sorted matching
    which is optimal in one dimension.
    """
    import itertools

    a = list(a)
    b = list(b)
    assert len(a) == len(b)
    if len(a) <= 7:
        best = min(sum(abs(x - y) for x, y in zip(a, perm)) for perm in itertools.permutations(b))
        return best / len(a)
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def adam_scalar(x0, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = float(x0), 0.0, 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (math.sqrt(vh) + eps)
        out.append(x)
    return out
