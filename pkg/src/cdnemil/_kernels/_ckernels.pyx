# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_fallback`` function for function."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    cdef double mx, s
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, m):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(m):
            y[i, j] = exp(x[i, j] - mx)
            s += y[i, j]
        for j in range(m):
            y[i, j] /= s
    return out


def softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    cdef double dot
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gx = out
    for i in range(n):
        dot = 0.0
        for j in range(m):
            dot += gy[i, j] * y[i, j]
        for j in range(m):
            gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def center_std(const double[:, ::1] z, const double[::1] mu):
    cdef Py_ssize_t k = z.shape[0], m = z.shape[1], i, j
    cdef double d
    out = np.zeros(m, dtype=np.float64)
    cdef double[::1] s = out
    for i in range(k):
        for j in range(m):
            d = z[i, j] - mu[j]
            s[j] += d * d
    for j in range(m):
        s[j] = sqrt(s[j] / (k - 1))
    return out


def center_std_backward(const double[:, ::1] z, const double[::1] mu,
                        const double[::1] std, const double[::1] gstd):
    cdef Py_ssize_t k = z.shape[0], m = z.shape[1], i, j
    gz_arr = np.empty((k, m), dtype=np.float64)
    gmu_arr = np.zeros(m, dtype=np.float64)
    scale_arr = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] gz = gz_arr
    cdef double[::1] gmu = gmu_arr
    cdef double[::1] scale = scale_arr
    for j in range(m):
        if std[j] > 0.0:
            scale[j] = gstd[j] / ((k - 1) * std[j])
    for i in range(k):
        for j in range(m):
            gz[i, j] = (z[i, j] - mu[j]) * scale[j]
            gmu[j] -= gz[i, j]
    return gz_arr, gmu_arr


def auroc(scores, labels):
    cdef double[::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef long long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef long long[::1] order = np.argsort(s, kind="mergesort").astype(np.int64)
    cdef Py_ssize_t n = s.shape[0], i = 0, j, t
    cdef long long r2_pos = 0, n_pos = 0, doubled, count_pos
    while i < n:
        j = i + 1
        while j < n and s[order[j]] == s[order[i]]:
            j += 1
        doubled = i + j + 1
        count_pos = 0
        for t in range(i, j):
            if lab[order[t]] == 1:
                count_pos += 1
        r2_pos += doubled * count_pos
        n_pos += count_pos
        i = j
    cdef long long n_neg = n - n_pos
    return (r2_pos - n_pos * (n_pos + 1)) / (2.0 * n_pos * n_neg)


def mean_pairwise_distance(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], a, b, j
    cdef double total = 0.0, acc, d
    if n < 2:
        return 0.0
    for a in range(n):
        for b in range(a + 1, n):
            acc = 0.0
            for j in range(m):
                d = x[a, j] - x[b, j]
                acc += d * d
            total += sqrt(acc)
    return total / (n * (n - 1) / 2.0)
