"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``ANCHORITER_PURE_PYTHON=1``
to force the pure-Python fallback.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("ANCHORITER_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def segment_sums(values, lengths):
    """Sum consecutive runs of ``values`` with run lengths ``lengths``."""
    return _impl.segment_sums(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(lengths, dtype=np.int64),
    )


def staircase_norms(x0, n_steps, period, eps, alpha, noise=None, literal_order=False):
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if noise is None:
        noise = np.empty((0, len(x0)), dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    return _impl.staircase_norms(
        x0, int(n_steps), int(period), float(eps), float(alpha), noise, bool(literal_order)
    )


def max_pair_ratio(fx, fy, x, y):
    """Largest ``|fx_k - fy_k| / |x_k - y_k|`` over rows, skipping coincident pairs.

    Returns ``(ratio, row_index)``; ``row_index`` is -1 when every pair coincides.
    """
    arrs = [np.ascontiguousarray(np.atleast_2d(a), dtype=np.float64) for a in (fx, fy, x, y)]
    ratio, idx = _impl.max_pair_ratio(*arrs)
    return float(ratio), int(idx)
