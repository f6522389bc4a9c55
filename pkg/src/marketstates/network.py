"""Significance-filtered correlation graphs.

An edge joins two coins when their correlation over the epoch is too strong
to be explained by independent (white-noise) series. The test is two-sided
and Bonferroni-corrected over all K(K-1)/2 pairs.

Two null distributions are available for the sample correlation r of T
independent Gaussian observations:

``"student"`` (default)
    exact: r * sqrt((T-2) / (1-r^2)) follows Student's t with T-2 degrees
    of freedom.
``"fisher"``
    asymptotic: atanh(r) is normal with standard deviation 1/sqrt(T-3).
    It underestimates the far tail at small T, so at T=20 and a Bonferroni
    level near 1e-5 it lets through roughly four times the nominal number
    of spurious edges.

This is a deliberately simple stand-in for a full null-model selection
procedure; only the white-noise null is modelled.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .correlation import CorrelationMatrix
from .timeseries import Epoch

NULL_METHODS = ("student", "fisher")
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True, eq=False)
class MarketGraph:
    epoch: Epoch | None
    nodes: tuple[str, ...]
    labels: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]  # node-order pairs, sorted by node index
    alpha: float
    T_used: int
    method: str = "student"

    def adjacency(self) -> np.ndarray:
        idx = {n: i for i, n in enumerate(self.nodes)}
        A = np.zeros((len(self.nodes), len(self.nodes)), dtype=bool)
        for a, b in self.edges:
            A[idx[a], idx[b]] = A[idx[b], idx[a]] = True
        return A

    def to_json(self) -> dict:
        return {
            "epoch": None if self.epoch is None else self.epoch.index,
            "nodes": [{"id": n, "label": lab} for n, lab in zip(self.nodes, self.labels)],
            "edges": [[a, b] for a, b in self.edges],
            "alpha": self.alpha,
            "T": self.T_used,
            "null": self.method,
        }

    @classmethod
    def from_json(cls, data: dict, epoch: Epoch | None = None) -> "MarketGraph":
        return cls(
            epoch=epoch,
            nodes=tuple(n["id"] for n in data["nodes"]),
            labels=tuple(n["label"] for n in data["nodes"]),
            edges=tuple((a, b) for a, b in data["edges"]),
            alpha=float(data["alpha"]),
            T_used=int(data["T"]),
            method=data.get("null", "student"),
        )

    def to_dot(self) -> str:
        name = "epoch" if self.epoch is None else f"epoch_{self.epoch.index}"
        lines = [f"graph {name} {{"]
        for n, lab in zip(self.nodes, self.labels):
            lines.append(f"  {json.dumps(n)} [label={json.dumps(lab)}];")
        for a, b in self.edges:
            lines.append(f"  {json.dumps(a)} -- {json.dumps(b)};")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def write(self, directory: str | Path, stem: str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")
        (directory / f"{stem}.dot").write_text(self.to_dot(), encoding="utf-8")


@dataclass(frozen=True)
class GraphMetrics:
    density: float
    clustering: float
    n_edges: int


def _check(T: int, method: str) -> None:
    if method not in NULL_METHODS:
        raise ValueError(f"unknown null method {method!r}; choose from {NULL_METHODS}")
    if T <= 3:
        raise ValueError(f"T={T}: the white-noise null needs T >= 4")


def null_pvalues(magnitudes: np.ndarray, T: int, method: str = "student") -> np.ndarray:
    """Two-sided white-noise p-values for correlation magnitudes |r| in [0, 1]."""
    _check(T, method)
    r = np.clip(np.asarray(magnitudes, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        if method == "fisher":
            z = np.arctanh(r) * np.sqrt(T - 3)
            return 2.0 * stats.norm.sf(z)
        t = r * np.sqrt((T - 2) / (1.0 - r * r))
        return 2.0 * stats.t.sf(t, T - 2)


def critical_correlation(K: int, T: int, alpha: float = DEFAULT_ALPHA, method: str = "student") -> float:
    """Smallest |r| whose Bonferroni-corrected p-value reaches ``alpha``."""
    _check(T, method)
    m = K * (K - 1) / 2
    tail = alpha / m / 2.0
    if method == "fisher":
        return float(np.tanh(stats.norm.isf(tail) / np.sqrt(T - 3)))
    t = stats.t.isf(tail, T - 2)
    return float(t / np.sqrt(T - 2 + t * t))


def build_graph(
    matrix: CorrelationMatrix,
    alpha: float = DEFAULT_ALPHA,
    T: int | None = None,
    method: str = "student",
    uniform_labels: bool = False,
) -> MarketGraph:
    """Keep the pairs whose raw correlation rejects the white-noise null.

    A power-mapped matrix is accepted: the map is inverted first, and since
    it is strictly monotone in |C| the edge set is the same either way.
    ``T`` defaults to the epoch length.
    """
    if T is None:
        if matrix.epoch is None:
            raise ValueError("T is required when the matrix has no epoch")
        T = matrix.epoch.length
    _check(T, method)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    K = len(matrix.coin_ids)
    nodes = matrix.coin_ids
    labels = tuple("node" for _ in nodes) if uniform_labels else nodes
    if K < 2:
        return MarketGraph(matrix.epoch, nodes, labels, (), alpha, T, method)
    m = K * (K - 1) / 2
    iu, ju = np.triu_indices(K, 1)
    mag = matrix.raw_magnitudes[iu, ju]
    p = null_pvalues(mag, T, method)
    keep = (p < alpha / m) | (mag >= 1.0)
    edges = tuple((nodes[i], nodes[j]) for i, j, k in zip(iu, ju, keep) if k)
    return MarketGraph(matrix.epoch, nodes, labels, edges, alpha, T, method)


def graph_metrics(graph: MarketGraph) -> GraphMetrics:
    """Edge density |E| / (K(K-1)/2) and global clustering (transitivity)."""
    K = len(graph.nodes)
    n_edges = len(graph.edges)
    if K < 2 or n_edges == 0:
        return GraphMetrics(0.0, 0.0, n_edges)
    A = graph.adjacency().astype(np.int64)
    deg = A.sum(axis=1)
    closed = int(np.trace(A @ A @ A))  # 6 x triangles
    triples = int((deg * (deg - 1)).sum())  # 2 x connected triples
    clustering = closed / triples if triples else 0.0
    return GraphMetrics(n_edges / (K * (K - 1) / 2), clustering, n_edges)
