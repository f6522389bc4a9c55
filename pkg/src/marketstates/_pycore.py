"""Pure-Python/numpy twins of the compiled loops in ``_ccore.pyx``.

Every function here has the same signature and the same semantics as its
compiled counterpart; tests run both backends against each other.
"""
from __future__ import annotations

import numpy as np


def local_normalize(r: np.ndarray, n: int, min_periods: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.ascontiguousarray(r, dtype=np.float64)
    size = r.shape[0]
    out = np.full(size, np.nan)
    degenerate = np.zeros(size, dtype=bool)
    for t in range(size):
        lo = max(0, t - n + 1)
        w = r[lo : t + 1]
        if w.shape[0] < min_periods:
            continue
        if w.min() == w.max():
            degenerate[t] = True
            continue
        mean = w.sum() / w.shape[0]
        var = ((w - mean) ** 2).sum() / w.shape[0]
        if var == 0.0:  # spread too small to square without underflow
            degenerate[t] = True
            continue
        out[t] = (r[t] - mean) / np.sqrt(var)
    return out, degenerate


def wl_relabel(indptr: np.ndarray, indices: np.ndarray, labels: np.ndarray, table: dict) -> np.ndarray:
    lab = labels.tolist()
    ind = indices.tolist()
    ptr = indptr.tolist()
    out = np.empty(len(lab), dtype=np.int64)
    for i, own in enumerate(lab):
        key = (own, tuple(sorted(lab[j] for j in ind[ptr[i] : ptr[i + 1]])))
        found = table.get(key)
        if found is None:
            found = len(table)
            table[key] = found
        out[i] = found
    return out


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    m, k = X.shape[0], centers.shape[0]
    centers = centers.copy()
    labels = np.zeros(m, dtype=np.int64)
    prev = -1.0
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        dist2 = d2[np.arange(m), labels]
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c] == 0:
                movable = np.flatnonzero(counts[labels] > 1)
                far = movable[np.argmax(dist2[movable])]
                counts[labels[far]] -= 1
                labels[far] = c
                counts[c] = 1
                dist2[far] = 0.0
        inertia = sum(dist2.tolist())
        if prev >= 0.0 and (prev == 0.0 or abs(prev - inertia) < tol * prev):
            break
        prev = inertia
        centers = _means(X, labels, k)
    centers = _means(X, labels, k)
    inertia = float(((X - centers[labels]) ** 2).sum())
    return labels.astype(np.int64), centers, inertia, n_iter


def _means(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    return sums / np.bincount(labels, minlength=k)[:, None]
