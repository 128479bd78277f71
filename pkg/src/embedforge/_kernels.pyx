# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Keep semantics identical to ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log2

cnp.import_array()

ctypedef unsigned long long u64

cdef u64 FNV_OFFSET = 0xCBF29CE484222325ULL
cdef u64 FNV_PRIME = 0x100000001B3ULL


cdef inline u64 _fnv1a64(const unsigned char[:] data) noexcept nogil:
    cdef u64 h = FNV_OFFSET
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h ^= data[i]
        h *= FNV_PRIME
    return h


def fnv1a64(bytes data):
    if len(data) == 0:
        return int(FNV_OFFSET)
    return int(_fnv1a64(data))


def hash_buckets(tokens, long long hash_dim):
    cdef Py_ssize_t n = len(tokens), i
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef bytes t
    cdef u64 h
    for i in range(n):
        t = tokens[i]
        h = _fnv1a64(t) if len(t) else FNV_OFFSET
        out[i] = <cnp.int64_t>(h % <u64>hash_dim)
    return out


def infonce_loss_grad(sims, labels, double tau):
    cdef double[:, ::1] s = np.ascontiguousarray(sims, dtype=np.float64)
    cdef long long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = s.shape[0], m = s.shape[1], i, j
    grad_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] g = grad_arr
    cdef double mx, denom, total = 0.0, scale = 1.0 / (tau * n)
    with nogil:
        for i in range(n):
            mx = s[i, 0]
            for j in range(1, m):
                if s[i, j] > mx:
                    mx = s[i, j]
            denom = 0.0
            for j in range(m):
                g[i, j] = exp((s[i, j] - mx) / tau)
                denom += g[i, j]
            total += log(denom) - (s[i, lab[i]] - mx) / tau
            for j in range(m):
                g[i, j] = g[i, j] / denom * scale
            g[i, lab[i]] -= scale
    return total / n, grad_arr


def ranked_average_precision(rel):
    cdef cnp.int8_t[::1] r = np.ascontiguousarray(np.asarray(rel) != 0, dtype=np.int8)
    cdef Py_ssize_t i
    cdef long hits = 0
    cdef double total = 0.0
    for i in range(r.shape[0]):
        if r[i]:
            hits += 1
            total += <double>hits / (i + 1)
    return total / hits if hits else 0.0


def tied_average_precision(scores_desc, labels_desc):
    cdef double[::1] s = np.ascontiguousarray(scores_desc, dtype=np.float64)
    cdef cnp.int8_t[::1] y = np.ascontiguousarray(np.asarray(labels_desc) != 0, dtype=np.int8)
    cdef Py_ssize_t n = s.shape[0], i = 0, j
    cdef long n_pos = 0, tp = 0
    cdef double ap = 0.0, recall, prev = 0.0
    for i in range(n):
        n_pos += y[i]
    if n_pos == 0:
        return 0.0
    i = 0
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            tp += y[j]
            j += 1
        recall = <double>tp / n_pos
        ap += (recall - prev) * (<double>tp / j)
        prev = recall
        i = j
    return ap


def dcg_at_k(gains, Py_ssize_t k):
    cdef double[::1] g = np.ascontiguousarray(gains, dtype=np.float64)
    cdef Py_ssize_t i, lim = min(k, g.shape[0])
    cdef double total = 0.0
    for i in range(lim):
        if g[i] != 0:
            total += g[i] / log2(i + 2)
    return total
