# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: frame delta, windowed SSIM, and Levenshtein distance.

Contracts mirror premind.kernels._fallback; both backends must agree to
within floating-point noise (see tests and benchmarks/bench_kernels.py).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def mean_absdiff(const unsigned char[:, :, ::1] a, const unsigned char[:, :, ::1] b):
    """Mean absolute difference over all elements of two equal-shape uint8 arrays."""
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1], c = a.shape[2]
    if b.shape[0] != h or b.shape[1] != w or b.shape[2] != c:
        raise ValueError("shape mismatch")
    if h * w * c == 0:
        raise ValueError("empty input")
    cdef long long total = 0
    cdef int d
    cdef Py_ssize_t i, j, k
    for i in range(h):
        for j in range(w):
            for k in range(c):
                d = <int> a[i, j, k] - <int> b[i, j, k]
                total += d if d >= 0 else -d
    return total / <double> (h * w * c)


cdef void _corr_rows(const double[:, ::1] img, const double[::1] kern,
                     double[:, ::1] out) noexcept:
    cdef Py_ssize_t h = img.shape[0], wv = out.shape[1], k = kern.shape[0]
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(h):
        for j in range(wv):
            acc = 0.0
            for t in range(k):
                acc += img[i, j + t] * kern[t]
            out[i, j] = acc


cdef void _corr_cols(const double[:, ::1] img, const double[::1] kern,
                     double[:, ::1] out) noexcept:
    cdef Py_ssize_t hv = out.shape[0], w = img.shape[1], k = kern.shape[0]
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(hv):
        for j in range(w):
            acc = 0.0
            for t in range(k):
                acc += img[i + t, j] * kern[t]
            out[i, j] = acc


cdef void _corr_valid(const double[:, ::1] img, const double[::1] kern,
                      double[:, ::1] tmp, double[:, ::1] out) noexcept:
    _corr_rows(img, kern, tmp)
    _corr_cols(tmp, kern, out)


def ssim_mean(const double[:, ::1] x, const double[:, ::1] y,
              const double[::1] kernel, double c1, double c2):
    """Mean local SSIM over all positions where the window fits entirely."""
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], k = kernel.shape[0]
    if y.shape[0] != h or y.shape[1] != w:
        raise ValueError("shape mismatch")
    if h < k or w < k:
        raise ValueError("image smaller than window")
    cdef Py_ssize_t hv = h - k + 1, wv = w - k + 1

    xx_arr = np.empty((h, w), dtype=np.float64)
    yy_arr = np.empty((h, w), dtype=np.float64)
    xy_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] xx = xx_arr, yy = yy_arr, xy = xy_arr
    cdef Py_ssize_t i, j
    for i in range(h):
        for j in range(w):
            xx[i, j] = x[i, j] * x[i, j]
            yy[i, j] = y[i, j] * y[i, j]
            xy[i, j] = x[i, j] * y[i, j]

    tmp_arr = np.empty((h, wv), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    ux_arr = np.empty((hv, wv), dtype=np.float64)
    uy_arr = np.empty((hv, wv), dtype=np.float64)
    uxx_arr = np.empty((hv, wv), dtype=np.float64)
    uyy_arr = np.empty((hv, wv), dtype=np.float64)
    uxy_arr = np.empty((hv, wv), dtype=np.float64)
    cdef double[:, ::1] ux = ux_arr, uy = uy_arr
    cdef double[:, ::1] uxx = uxx_arr, uyy = uyy_arr, uxy = uxy_arr

    _corr_valid(x, kernel, tmp, ux)
    _corr_valid(y, kernel, tmp, uy)
    _corr_valid(xx, kernel, tmp, uxx)
    _corr_valid(yy, kernel, tmp, uyy)
    _corr_valid(xy, kernel, tmp, uxy)

    cdef double vx, vy, vxy, num, den, total = 0.0
    for i in range(hv):
        for j in range(wv):
            vx = uxx[i, j] - ux[i, j] * ux[i, j]
            vy = uyy[i, j] - uy[i, j] * uy[i, j]
            vxy = uxy[i, j] - ux[i, j] * uy[i, j]
            num = (2.0 * ux[i, j] * uy[i, j] + c1) * (2.0 * vxy + c2)
            den = (ux[i, j] * ux[i, j] + uy[i, j] * uy[i, j] + c1) * (vx + vy + c2)
            total += num / den
    return total / <double> (hv * wv)


def levenshtein(const unsigned char[::1] a, const unsigned char[::1] b):
    """Edit distance between two byte strings."""
    cdef Py_ssize_t la = a.shape[0], lb = b.shape[0]
    if lb == 0:
        return la
    if la == 0:
        return lb
    prev_arr = np.arange(lb + 1, dtype=np.int64)
    cur_arr = np.empty(lb + 1, dtype=np.int64)
    cdef long long[::1] prev = prev_arr, cur = cur_arr
    cdef Py_ssize_t i, j
    cdef long long best, cand
    for i in range(1, la + 1):
        cur[0] = i
        for j in range(1, lb + 1):
            best = prev[j] + 1
            cand = cur[j - 1] + 1
            if cand < best:
                best = cand
            cand = prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            if cand < best:
                best = cand
            cur[j] = best
        prev[:] = cur
    return int(prev[lb])
