# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics must match ``_pycore`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, NAN

cnp.import_array()


def local_normalize(const double[::1] r, Py_ssize_t n, Py_ssize_t min_periods):
    cdef Py_ssize_t size = r.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(size, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] degenerate = np.zeros(size, dtype=np.uint8)
    cdef double[::1] o = out
    cdef unsigned char[::1] deg = degenerate
    cdef Py_ssize_t t, j, lo, w
    cdef double s, mean, var, d, lo_v, hi_v
    for t in range(size):
        lo = t - n + 1
        if lo < 0:
            lo = 0
        w = t - lo + 1
        if w < min_periods:
            o[t] = NAN
            continue
        s = 0.0
        lo_v = r[lo]
        hi_v = r[lo]
        for j in range(lo, t + 1):
            s += r[j]
            if r[j] < lo_v:
                lo_v = r[j]
            if r[j] > hi_v:
                hi_v = r[j]
        if lo_v == hi_v:
            o[t] = NAN
            deg[t] = 1
            continue
        mean = s / w
        var = 0.0
        for j in range(lo, t + 1):
            d = r[j] - mean
            var += d * d
        var = var / w
        if var == 0.0:  # spread too small to square without underflow
            o[t] = NAN
            deg[t] = 1
            continue
        o[t] = (r[t] - mean) / sqrt(var)
    return out, degenerate.view(bool)


def wl_relabel(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const cnp.int64_t[::1] labels, dict table):
    cdef Py_ssize_t size = labels.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(size, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef Py_ssize_t i, j
    cdef list neigh
    cdef object key, found
    for i in range(size):
        neigh = [labels[indices[j]] for j in range(indptr[i], indptr[i + 1])]
        neigh.sort()
        key = (labels[i], tuple(neigh))
        found = table.get(key)
        if found is None:
            found = len(table)
            table[key] = found
        o[i] = found
    return out


def lloyd(const double[:, ::1] X, double[:, ::1] centers, Py_ssize_t max_iter, double tol):
    cdef Py_ssize_t m = X.shape[0], dim = X.shape[1], k = centers.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels_arr = np.zeros(m, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dist2 = np.empty(m, dtype=np.float64)
    cdef cnp.int64_t[::1] counts = np.zeros(k, dtype=np.int64)
    cdef Py_ssize_t it, i, c, d, best, far, n_iter = 0
    cdef double acc, diff, best_d, inertia, prev = -1.0, far_d
    for it in range(max_iter):
        n_iter = it + 1
        for c in range(k):
            counts[c] = 0
        for i in range(m):
            best = 0
            best_d = 0.0
            for c in range(k):
                acc = 0.0
                for d in range(dim):
                    diff = X[i, d] - centers[c, d]
                    acc += diff * diff
                if c == 0 or acc < best_d:
                    best_d = acc
                    best = c
            labels[i] = best
            dist2[i] = best_d
            counts[best] += 1
        for c in range(k):
            if counts[c] == 0:
                far = -1
                far_d = -1.0
                for i in range(m):
                    if counts[labels[i]] > 1 and dist2[i] > far_d:
                        far_d = dist2[i]
                        far = i
                counts[labels[far]] -= 1
                labels[far] = c
                counts[c] = 1
                dist2[far] = 0.0
        inertia = 0.0
        for i in range(m):
            inertia += dist2[i]
        if prev >= 0.0 and (prev == 0.0 or fabs(prev - inertia) < tol * prev):
            break
        prev = inertia
        _update_centers(X, labels, counts, centers)
    _update_centers(X, labels, counts, centers)
    inertia = 0.0
    for i in range(m):
        c = labels[i]
        for d in range(dim):
            diff = X[i, d] - centers[c, d]
            inertia += diff * diff
    return labels_arr, np.asarray(centers), inertia, n_iter


cdef void _update_centers(const double[:, ::1] X, cnp.int64_t[::1] labels,
                          cnp.int64_t[::1] counts, double[:, ::1] centers):
    cdef Py_ssize_t m = X.shape[0], dim = X.shape[1], k = centers.shape[0]
    cdef Py_ssize_t i, c, d
    for c in range(k):
        counts[c] = 0
        for d in range(dim):
            centers[c, d] = 0.0
    for i in range(m):
        c = labels[i]
        counts[c] += 1
        for d in range(dim):
            centers[c, d] += X[i, d]
    for c in range(k):
        for d in range(dim):
            centers[c, d] /= counts[c]
