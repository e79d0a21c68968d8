"""Slow, obviously-correct reference computations used by the tests."""
import numpy as np


def naive_conv2d(x, w, stride=1, padding=0):
    m, h, wd = x.shape
    n, m2, s, _ = w.shape
    assert m == m2
    xp = np.zeros((m, h + 2 * padding, wd + 2 * padding))
    xp[:, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - s) // stride + 1
    wo = (wd + 2 * padding - s) // stride + 1
    out = np.zeros((n, ho, wo))
    for j in range(n):
        for r in range(ho):
            for c in range(wo):
                acc = 0.0
                for k in range(m):
                    for a in range(s):
                        for b in range(s):
                            acc += w[j, k, a, b] * xp[k, r * stride + a, c * stride + b]
                out[j, r, c] = acc
    return out


def central_difference(f, array, index, step=1e-5):
    """d f / d array[index] by a central difference, restoring the entry afterwards."""
    orig = array[index]
    array[index] = orig + step
    up = f()
    array[index] = orig - step
    down = f()
    array[index] = orig
    return (up - down) / (2 * step)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def l2_norms_bruteforce(w):
    out = []
    for j in range(w.shape[0]):
        total = 0.0
        for v in w[j].ravel():
            total += v * v
        out.append(total ** 0.5)
    return np.array(out)
