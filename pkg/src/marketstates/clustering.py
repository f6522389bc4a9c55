"""Choose the number of market states and assign epochs to them.

The normalised kernel matrix is read as an affinity between epochs. The
number of states is the position of the largest gap between consecutive
ascending eigenvalues of the symmetric normalised Laplacian; epochs are then
clustered by k-means on the rows of the matching eigenvectors
(Ng-Jordan-Weiss embedding).

The affinity can be sparsified to a symmetric k-nearest-neighbour graph.
A fully connected affinity has a large first gap whenever every pair of
epochs shares a common baseline similarity, and that first gap then hides
the cluster structure. With WL kernels over a fixed coin universe every
pair shares at least the iteration-0 histogram, so the pipeline uses a
kNN graph by default.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from ._backend import core
from .kernel import DistanceMatrix, KernelMatrix


DEFAULT_NEIGHBORS = 10


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    epoch_ids: tuple
    coordinates: np.ndarray
    eigenvalues: np.ndarray


@dataclass(frozen=True, eq=False)
class StateAssignment:
    epoch_ids: tuple
    state: np.ndarray
    k: int
    medoid: tuple
    inertia: float

    def members(self, s: int) -> list:
        return [e for e, lab in zip(self.epoch_ids, self.state) if lab == s]

    def sizes(self) -> list[int]:
        return np.bincount(self.state, minlength=self.k).tolist()


@dataclass(frozen=True)
class StateSummary:
    state: int
    members: tuple
    medoid: object
    medoid_matrix: object  # CorrelationMatrix of the medoid epoch, when available
    mean_correlation: float


def _values(K) -> np.ndarray:
    return np.asarray(K.values if isinstance(K, KernelMatrix) else K, dtype=float)


def affinity_matrix(values: np.ndarray, n_neighbors: int | None = None) -> np.ndarray:
    """Kernel values with a zero diagonal, optionally kept only on a symmetric kNN graph.

    Row ``i`` keeps its ``n_neighbors`` largest off-diagonal entries (ties to
    the lower index); an entry survives if either endpoint keeps it.
    """
    A = np.array(values, dtype=float)
    np.fill_diagonal(A, 0.0)
    m = A.shape[0]
    if n_neighbors is None or n_neighbors <= 0 or n_neighbors >= m - 1:
        return A
    keep = np.zeros((m, m), dtype=bool)
    for i in range(m):
        others = np.delete(np.arange(m), i)
        order = np.lexsort((others, -A[i, others]))
        keep[i, others[order[:n_neighbors]]] = True
    keep |= keep.T
    return np.where(keep, A, 0.0)


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    """L = I - D^-1/2 A D^-1/2; rows with zero degree count as degree 1."""
    deg = A.sum(axis=1)
    deg = np.where(deg > 0, deg, 1.0)
    s = 1.0 / np.sqrt(deg)
    L = np.eye(A.shape[0]) - s[:, None] * A * s[None, :]
    return (L + L.T) / 2.0


def laplacian_spectrum(K, n_neighbors: int | None = DEFAULT_NEIGHBORS) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and eigenvectors of the normalised Laplacian."""
    L = normalized_laplacian(affinity_matrix(_values(K), n_neighbors))
    w, V = np.linalg.eigh(L)
    if not np.all(np.isfinite(w)):
        raise ClusteringError("non-finite Laplacian eigenvalues")
    return w, V


def eigengap_from_eigenvalues(w: np.ndarray, k_max: int = 10) -> int:
    gaps = np.diff(w)[:k_max]
    return int(np.argmax(gaps)) + 1  # argmax keeps the first maximum


def eigengap_k(K, k_max: int = 10, n_neighbors: int | None = DEFAULT_NEIGHBORS) -> int:
    """Number of clusters at the largest gap lambda[i+1] - lambda[i], i in 1..k_max.

    ``n_neighbors=None`` uses the fully connected affinity.
    """
    m = _values(K).shape[0]
    if not (2 <= k_max < m):
        raise ClusteringError(f"need m > k_max >= 2 (m={m}, k_max={k_max})")
    w, _ = laplacian_spectrum(K, n_neighbors)
    return eigengap_from_eigenvalues(w, k_max)


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # make each eigenvector's largest-magnitude entry positive (first on ties)
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def spectral_embed(K, k: int, n_neighbors: int | None = DEFAULT_NEIGHBORS, epoch_ids: Sequence | None = None) -> SpectralEmbedding:
    """Rows of the k lowest Laplacian eigenvectors, scaled to unit length."""
    vals = _values(K)
    m = vals.shape[0]
    if not (2 <= k < m):
        raise ClusteringError(f"need 2 <= k < m (k={k}, m={m})")
    if epoch_ids is None:
        epoch_ids = K.epoch_ids if isinstance(K, KernelMatrix) else tuple(range(m))
    w, V = laplacian_spectrum(vals, n_neighbors)
    U = _fix_signs(V[:, :k])
    norms = np.linalg.norm(U, axis=1)
    zero = np.flatnonzero(norms < 1e-300)
    if zero.size:
        raise ClusteringError(f"epoch {epoch_ids[zero[0]]} has a zero embedding row")
    return SpectralEmbedding(tuple(epoch_ids), U / norms[:, None], w)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = X.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(m), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Renumber states by first occurrence."""
    mapping: dict[int, int] = {}
    for lab in labels.tolist():
        mapping.setdefault(lab, len(mapping))
    return np.array([mapping[lab] for lab in labels.tolist()], dtype=np.int64)


def _medoids(state: np.ndarray, k: int, D: np.ndarray, epoch_ids: tuple) -> tuple:
    out = []
    for s in range(k):
        idx = np.flatnonzero(state == s)
        totals = D[np.ix_(idx, idx)].sum(axis=1)
        out.append(epoch_ids[idx[int(np.argmin(totals))]])  # first minimum = lowest index
    return tuple(out)


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = 50,
    epoch_ids: Sequence | None = None,
    distances: DistanceMatrix | np.ndarray | None = None,
    max_iter: int = 300,
    tol: float = 1e-10,
    jobs: int = 1,
) -> StateAssignment:
    """Best of ``restarts`` k-means++ / Lloyd runs.

    Restart ``r`` draws from the ``r``-th child of ``SeedSequence(seed)``, so
    the result does not depend on ``jobs``; the winner is the lowest
    (inertia, restart index). Medoids use ``distances`` when given, else
    Euclidean distances between the points.
    """
    X = np.ascontiguousarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    m = X.shape[0]
    if k < 1 or k > m:
        raise ClusteringError(f"need 1 <= k <= m (k={k}, m={m})")
    if restarts < 1:
        raise ClusteringError("restarts must be >= 1")
    children = np.random.SeedSequence(seed).spawn(restarts)

    def one(r: int):
        rng = np.random.default_rng(children[r])
        centers = np.ascontiguousarray(_kmeanspp(X, k, rng))
        labels, _, inertia, _ = core.lloyd(X, centers, max_iter, tol)
        return inertia, r, np.asarray(labels, dtype=np.int64)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(one, range(restarts)))
    else:
        runs = [one(r) for r in range(restarts)]
    inertia, _, labels = min(runs, key=lambda t: (t[0], t[1]))
    state = _canonical(labels)
    ids = tuple(epoch_ids) if epoch_ids is not None else tuple(range(m))
    if distances is None:
        D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
    else:
        D = np.asarray(distances.values if isinstance(distances, DistanceMatrix) else distances, dtype=float)
    return StateAssignment(ids, state, k, _medoids(state, k, D, ids), float(inertia))


def with_medoids(assignment: StateAssignment, distances: DistanceMatrix | np.ndarray) -> StateAssignment:
    D = np.asarray(distances.values if isinstance(distances, DistanceMatrix) else distances, dtype=float)
    medoid = _medoids(assignment.state, assignment.k, D, assignment.epoch_ids)
    return StateAssignment(assignment.epoch_ids, assignment.state, assignment.k, medoid, assignment.inertia)


def summarize_states(
    assignment: StateAssignment,
    distances: DistanceMatrix | np.ndarray,
    matrices: Mapping | None = None,
    mean_correlations: Mapping | None = None,
) -> list[StateSummary]:
    """Per state: members, medoid (least total distance, lower index on ties),
    the medoid's correlation matrix and the members' mean correlation."""
    D = np.asarray(distances.values if isinstance(distances, DistanceMatrix) else distances, dtype=float)
    medoids = _medoids(assignment.state, assignment.k, D, assignment.epoch_ids)
    out = []
    for s in range(assignment.k):
        members = tuple(assignment.members(s))
        if mean_correlations is not None:
            mc = float(np.mean([mean_correlations[e] for e in members]))
        elif matrices is not None:
            from .correlation import mean_offdiagonal

            mc = float(np.mean([mean_offdiagonal(matrices[e].values) for e in members]))
        else:
            mc = float("nan")
        mat = matrices.get(medoids[s]) if matrices is not None else None
        out.append(StateSummary(s, members, medoids[s], mat, mc))
    return out


def adjusted_rand_index(a: Sequence[int], b: Sequence[int]) -> float:
    from sklearn.metrics import adjusted_rand_score  # slow import, only needed here

    return float(adjusted_rand_score(list(a), list(b)))


def stream_seed(seed: int, name: str) -> int:
    """Derive an independent integer seed for a named stage."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
