"""Pure-Python reference versions of the compiled kernels in ``_kernels.pyx``."""

import math

import numpy as np


def segment_sums(values, lengths):
    values = np.asarray(values, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    out = np.empty(len(lengths), dtype=np.float64)
    pos = 0
    for k, length in enumerate(lengths):
        acc = 0.0
        for j in range(pos, pos + int(length)):
            acc += values[j]
        out[k] = acc
        pos += int(length)
    if pos != len(values):
        raise ValueError("segment lengths do not cover the value array")
    return out


def _norm(x):
    acc = 0.0
    for v in x:
        acc += v * v
    return math.sqrt(acc)


def staircase_norms(x0, n_steps, period, eps, alpha, noise, literal_order=False):
    x = [float(v) for v in x0]
    noise = np.asarray(noise, dtype=np.float64)
    use_noise = noise.shape[0] > 0
    grow = 1.0 + eps
    out = np.empty(n_steps + 1, dtype=np.float64)
    row = 0

    def drift():
        nonlocal x, row
        if use_noise:
            eta = noise[row]
            x = [grow * xi + float(e) for xi, e in zip(x, eta)]
        else:
            x = [grow * xi + 0.0 for xi in x]
        row += 1

    if literal_order:
        for t in range(n_steps + 1):
            out[t] = _norm(x)
            if t > 0 and t % period == 0:
                x = [alpha * xi for xi in x]
            else:
                drift()
    else:
        out[0] = _norm(x)
        for t in range(1, n_steps + 1):
            if t % period == 0:
                x = [alpha * xi for xi in x]
            else:
                drift()
            out[t] = _norm(x)
    return out


def max_pair_ratio(fx, fy, x, y):
    num = np.sum((np.asarray(fx) - np.asarray(fy)) ** 2, axis=1)
    den = np.sum((np.asarray(x) - np.asarray(y)) ** 2, axis=1)
    ok = den > 0.0
    if not ok.any():
        return 0.0, -1
    ratios = np.full(len(den), -np.inf)
    ratios[ok] = np.sqrt(num[ok] / den[ok])
    k = int(np.argmax(ratios))
    return float(ratios[k]), k
