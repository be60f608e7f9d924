# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled metric kernels; same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def first_crossings(p_hat, thresholds):
    cdef const double[::1] p = np.ascontiguousarray(p_hat, dtype=np.float64)
    thr_arr = np.ascontiguousarray(thresholds, dtype=np.float64)
    cdef const long long[::1] order = np.argsort(thr_arr, kind="stable").astype(np.int64)
    cdef const double[::1] thr = thr_arr
    cdef Py_ssize_t n = p.shape[0], m = thr.shape[0], i, k = 0
    out = np.full(m, -1, dtype=np.int64)
    cdef long long[::1] o = out
    cdef double run
    # one pass over frames; thresholds are consumed in ascending order as the running max passes them
    for i in range(n):
        if i == 0 or p[i] > run:
            run = p[i]
        while k < m and run > thr[order[k]]:
            o[order[k]] = i
            k += 1
        if k == m:
            break
    return out


def average_precision(scores, labels):
    s_arr = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s_arr, kind="stable")
    cdef const double[::1] s = np.ascontiguousarray(s_arr[order])
    cdef const unsigned char[::1] y = np.ascontiguousarray(np.asarray(labels, dtype=bool)[order]).view(np.uint8)
    cdef Py_ssize_t n = s.shape[0], i = 0, j, k
    cdef long long tp = 0, block_tp, n_pos = 0
    cdef double total = 0.0
    while i < n:
        j = i
        block_tp = 0
        while j < n and s[j] == s[i]:
            block_tp += y[j]
            j += 1
        tp += block_tp
        total += block_tp * (<double>tp / j)
        n_pos += block_tp
        i = j
    return total / n_pos


def auc(scores, labels):
    s_arr = np.asarray(scores, dtype=np.float64)
    order = np.argsort(s_arr, kind="stable")
    cdef const double[::1] s = np.ascontiguousarray(s_arr[order])
    cdef const unsigned char[::1] y = np.ascontiguousarray(np.asarray(labels, dtype=bool)[order]).view(np.uint8)
    cdef Py_ssize_t n = s.shape[0], i = 0, j, k
    cdef long long n_pos = 0, block_pos
    cdef double rank_sum = 0.0, avg
    while i < n:
        j = i
        block_pos = 0
        while j < n and s[j] == s[i]:
            block_pos += y[j]
            j += 1
        avg = (i + j + 1) / 2.0
        rank_sum += block_pos * avg
        n_pos += block_pos
        i = j
    cdef long long n_neg = n - n_pos
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (<double>n_pos * n_neg)
