"""Weisfeiler-Lehman subtree kernel over a collection of labelled graphs.

One refinement step replaces every node label by a compressed id for the
pair (own label, sorted multiset of neighbour labels). Ids come from a
dictionary shared by all graphs in a collection, so equal signatures get
equal ids everywhere. The feature map of a graph is the label-count
histogram of iterations 0..h; the kernel is the dot product of feature maps.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from ._backend import core


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    labels: tuple[str, ...]
    adjacency: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        adj = tuple(tuple(sorted(int(j) for j in nb)) for nb in self.adjacency)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "adjacency", adj)
        if len(adj) != len(labels):
            raise KernelError("one adjacency list per node required")
        for i, nb in enumerate(adj):
            for j in nb:
                if j == i:
                    raise KernelError(f"self-loop on node {i}")
                if not 0 <= j < len(labels) or i not in adj[j]:
                    raise KernelError(f"edge {i}-{j} is not symmetric")
            if len(set(nb)) != len(nb):
                raise KernelError(f"repeated neighbour on node {i}")

    @classmethod
    def from_edges(cls, labels: Sequence[str], edges: Iterable[tuple[int, int]]) -> "LabeledGraph":
        adj: list[set[int]] = [set() for _ in labels]
        for a, b in edges:
            if a == b:
                raise KernelError(f"self-loop on node {a}")
            adj[a].add(b)
            adj[b].add(a)
        return cls(tuple(labels), tuple(tuple(s) for s in adj))

    @classmethod
    def from_market_graph(cls, graph) -> "LabeledGraph":
        idx = {n: i for i, n in enumerate(graph.nodes)}
        return cls.from_edges(graph.labels, [(idx[a], idx[b]) for a, b in graph.edges])

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nb in enumerate(self.adjacency) for j in nb if i < j]

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        indptr = np.zeros(len(self.adjacency) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(nb) for nb in self.adjacency])
        indices = np.fromiter((j for nb in self.adjacency for j in nb), dtype=np.int64, count=int(indptr[-1]))
        return indptr, indices

    def permuted(self, perm: Sequence[int]) -> "LabeledGraph":
        """Node ``i`` of the result is node ``perm[i]`` of this graph."""
        inv = {old: new for new, old in enumerate(perm)}
        labels = [self.labels[old] for old in perm]
        return LabeledGraph.from_edges(labels, [(inv[a], inv[b]) for a, b in self.edges])


class WLEncoder:
    """The shared compression dictionary.

    Initial labels and compressed signatures draw ids from one counter, so
    an id never means two different things.
    """

    def __init__(self):
        self.table: dict = {}
        self.names: list[str] = []

    def __len__(self) -> int:
        return len(self.table)

    def _sync_names(self) -> None:
        for i in range(len(self.names), len(self.table)):
            self.names.append(f"wl{i}")

    def initial(self, graph: LabeledGraph) -> np.ndarray:
        out = np.empty(len(graph), dtype=np.int64)
        for i, lab in enumerate(graph.labels):
            found = self.table.get(lab)
            if found is None:
                self._sync_names()
                found = len(self.table)
                self.table[lab] = found
                self.names.append(lab)
            out[i] = found
        return out

    def step(self, graph: LabeledGraph, ids: np.ndarray) -> np.ndarray:
        indptr, indices = graph.csr()
        new = core.wl_relabel(indptr, indices, np.ascontiguousarray(ids, dtype=np.int64), self.table)
        self._sync_names()
        return new

    def iterations(self, graph: LabeledGraph, h: int) -> list[np.ndarray]:
        ids = [self.initial(graph)]
        for _ in range(h):
            ids.append(self.step(graph, ids[-1]))
        return ids

    def name(self, label_id: int) -> str:
        self._sync_names()
        return self.names[label_id]


@dataclass(frozen=True)
class FeatureHistogram:
    """Label counts per WL iteration, iteration 0 first."""

    counts: tuple[dict[str, int], ...]

    @property
    def h(self) -> int:
        return len(self.counts) - 1

    def dot(self, other: "FeatureHistogram") -> int:
        total = 0
        for a, b in zip(self.counts, other.counts):
            if len(b) < len(a):
                a, b = b, a
            total += sum(v * b.get(k, 0) for k, v in a.items())
        return total


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    epoch_ids: tuple
    values: np.ndarray
    h: int
    normalized: bool


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    epoch_ids: tuple
    values: np.ndarray


def wl_refine(graph: LabeledGraph, encoder: WLEncoder | None = None) -> LabeledGraph:
    """One relabelling step; pass the same encoder for every graph of a collection."""
    encoder = encoder if encoder is not None else WLEncoder()
    ids = encoder.step(graph, encoder.initial(graph))
    return LabeledGraph(tuple(encoder.name(i) for i in ids), graph.adjacency)


def wl_feature_map(graph: LabeledGraph, h: int = 3, encoder: WLEncoder | None = None) -> FeatureHistogram:
    if h < 0:
        raise ValueError("h must be >= 0")
    encoder = encoder if encoder is not None else WLEncoder()
    counts = []
    for ids in encoder.iterations(graph, h):
        counts.append({encoder.name(k): v for k, v in sorted(Counter(ids.tolist()).items())})
    return FeatureHistogram(tuple(counts))


def wl_kernel(g1: LabeledGraph, g2: LabeledGraph, h: int = 3, encoder: WLEncoder | None = None) -> int:
    encoder = encoder if encoder is not None else WLEncoder()
    return wl_feature_map(g1, h, encoder).dot(wl_feature_map(g2, h, encoder))


def feature_matrix(graphs: Sequence[LabeledGraph], h: int, encoder: WLEncoder | None = None) -> sparse.csr_matrix:
    """Sparse m x n_labels count matrix over iterations 0..h.

    Labels are compressed level by level (all graphs at iteration 1, then
    all at iteration 2, ...) in graph order, so ids do not depend on how
    the caller schedules later work. Each id belongs to exactly one
    iteration, so one column per id keeps iterations apart.
    """
    if h < 0:
        raise ValueError("h must be >= 0")
    encoder = encoder if encoder is not None else WLEncoder()
    current = [encoder.initial(g) for g in graphs]
    per_graph = [[ids] for ids in current]
    for _ in range(h):
        current = [encoder.step(g, ids) for g, ids in zip(graphs, current)]
        for acc, ids in zip(per_graph, current):
            acc.append(ids)
    rows, cols = [], []
    for r, levels in enumerate(per_graph):
        for ids in levels:
            cols.append(ids)
            rows.append(np.full(ids.shape[0], r, dtype=np.int64))
    rows_a = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols_a = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    data = np.ones(rows_a.shape[0], dtype=np.int64)
    F = sparse.coo_matrix((data, (rows_a, cols_a)), shape=(len(graphs), max(len(encoder), 1)), dtype=np.int64)
    return F.tocsr()


def kernel_matrix(
    graphs: Sequence[LabeledGraph],
    h: int = 3,
    normalize: bool = True,
    epoch_ids: Sequence | None = None,
) -> KernelMatrix:
    """All pairwise WL kernels; normalised as K(x,y) / sqrt(K(x,x) K(y,y)) on request."""
    if len(graphs) < 2:
        raise KernelError("need at least two graphs")
    for i, g in enumerate(graphs):
        if len(g) == 0:
            raise KernelError(f"graph {i} has no nodes; its self-kernel is 0")
    F = feature_matrix(graphs, h)
    K = (F @ F.T).toarray().astype(np.int64)
    values = K.astype(float)
    if normalize:
        d = np.sqrt(np.diag(values))
        values = np.clip(values / np.outer(d, d), 0.0, 1.0)
        np.fill_diagonal(values, 1.0)
    ids = tuple(epoch_ids) if epoch_ids is not None else tuple(range(len(graphs)))
    return KernelMatrix(ids, values, h, normalize)


def min_eigenvalue_ratio(values: np.ndarray) -> float:
    """min eigenvalue / max |eigenvalue| of a symmetric matrix (0 for the zero matrix)."""
    w = np.linalg.eigvalsh(values)
    scale = max(abs(w[0]), abs(w[-1]))
    return float(w[0] / scale) if scale > 0 else 0.0


def is_psd(values: np.ndarray, rtol: float = 1e-8) -> bool:
    return min_eigenvalue_ratio(values) >= -rtol


def kernel_distance(K: KernelMatrix, psd_rtol: float = 1e-8, atol: float = 1e-9) -> DistanceMatrix:
    """Feature-space distance sqrt(K(x,x) + K(y,y) - 2K(x,y))."""
    V = np.asarray(K.values, dtype=float)
    if not is_psd(V, psd_rtol):
        raise KernelError(f"kernel matrix is not PSD (min/max eigenvalue {min_eigenvalue_ratio(V):.3g})")
    diag = np.diag(V)
    d2 = diag[:, None] + diag[None, :] - 2.0 * V
    tol = atol * max(1.0, float(np.abs(diag).max()))
    if np.any(d2 < -tol):
        raise KernelError(f"negative squared distance {d2.min():.3g}; the kernel is broken")
    d2 = np.maximum(d2, 0.0)
    np.fill_diagonal(d2, 0.0)
    D = np.sqrt(d2)
    return DistanceMatrix(K.epoch_ids, (D + D.T) / 2.0)
