"""Hot numeric kernels with a compiled core and a numpy fallback.

The Cython extension (``_native``) is optional: when it was not built, or
when PREMIND_PURE_PYTHON is set, the numpy implementations take over with
identical contracts. ``backend()`` reports which one is active;
benchmarks/bench_kernels.py compares the two.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("PREMIND_PURE_PYTHON"):
    _impl = _fallback
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

mean_absdiff = _impl.mean_absdiff
ssim_mean = _impl.ssim_mean
levenshtein = _impl.levenshtein


def backend() -> str:
    """Name of the active kernel backend: 'native' or 'fallback'."""
    return "fallback" if _impl is _fallback else "native"


def gaussian_kernel(radius: int = 5, sigma: float = 1.5) -> np.ndarray:
    """Normalized 1-D Gaussian window over integer offsets [-radius, radius]."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()
