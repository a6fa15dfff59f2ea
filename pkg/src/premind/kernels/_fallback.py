"""Numpy implementations of the hot kernels.

Mirrors the contracts of the compiled extension (``_native``); used whenever
the extension is missing or PREMIND_PURE_PYTHON is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def mean_absdiff(a, b):
    """Mean absolute difference over all elements of two equal-shape uint8 arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(a.astype(np.int16) - b.astype(np.int16))))


def _correlate_valid(img, kernel):
    # Separable valid-mode correlation: rows, then columns.
    rows = sliding_window_view(img, kernel.size, axis=1) @ kernel
    return sliding_window_view(rows, kernel.size, axis=0) @ kernel


def ssim_mean(x, y, kernel, c1, c2):
    """Mean local SSIM over all positions where the window fits entirely.

    ``x`` and ``y`` are float64 grayscale images of equal shape; ``kernel`` is
    a normalized 1-D window applied separably.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    k = kernel.size
    if x.shape[0] < k or x.shape[1] < k:
        raise ValueError(f"image smaller than {k}x{k} window")
    ux = _correlate_valid(x, kernel)
    uy = _correlate_valid(y, kernel)
    uxx = _correlate_valid(x * x, kernel)
    uyy = _correlate_valid(y * y, kernel)
    uxy = _correlate_valid(x * y, kernel)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    num = (2.0 * ux * uy + c1) * (2.0 * vxy + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def levenshtein(a, b):
    """Edit distance between two byte strings."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]
