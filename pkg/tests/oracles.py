"""Independent reference implementations used as test oracles."""
from collections import Counter
from itertools import combinations, product


def wl_features(labels, edges, h):
    """WL feature map with uncompressed labels.

    A node's label at iteration i+1 is the nested tuple (label_i, sorted
    neighbour labels_i), which is injective by construction, so no
    dictionary is involved. Keys carry the iteration number.
    """
    n = len(labels)
    nbrs = [[] for _ in range(n)]
    for a, b in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    current = [("leaf", lab) for lab in labels]
    feats = Counter((0, lab) for lab in current)
    for it in range(1, h + 1):
        current = [(current[i], tuple(sorted(current[j] for j in nbrs[i]))) for i in range(n)]
        feats.update((it, lab) for lab in current)
    return feats


def wl_dot(g1, g2, h):
    f1, f2 = wl_features(*g1, h), wl_features(*g2, h)
    return sum(v * f2[k] for k, v in f1.items())


def all_graphs(n, alphabet="ab"):
    """Every labelled graph on n nodes: (labels, edges)."""
    pairs = list(combinations(range(n), 2))
    for mask in range(1 << len(pairs)):
        edges = [p for b, p in enumerate(pairs) if mask >> b & 1]
        for labels in product(alphabet, repeat=n):
            yield list(labels), edges


def random_graph(rng, n, p=0.4, alphabet="ab"):
    labels = [alphabet[int(x)] for x in rng.integers(len(alphabet), size=n)]
    edges = [(i, j) for i, j in combinations(range(n), 2) if rng.random() < p]
    return labels, edges
