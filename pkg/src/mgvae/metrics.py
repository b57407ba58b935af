"""Generation and link-prediction metrics: graph statistic histograms,
MMD between graph sets, AUC/AP, and edge-reconstruction diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .graph import Graph

__all__ = [
    "GraphStats",
    "graph_stats",
    "mmd",
    "auc_ap",
    "edge_recon_metrics",
    "ORBIT_MAX_NODES",
]

ORBIT_MAX_NODES = 20  # C(20, 4) = 4845 subsets; enumeration is exact here
CLUSTERING_BINS = 100


@dataclass(frozen=True)
class GraphStats:
    degree_hist: np.ndarray
    clustering_hist: np.ndarray
    orbit_hist: np.ndarray


def graph_stats(g: Graph) -> GraphStats:
    """Per-graph normalized histograms of degrees, clustering coefficients,
    and connected-4-node-graphlet participation counts."""
    if g.n < 1:
        raise ValueError("empty graph")
    A = (g.adjacency > 0).astype(int)
    np.fill_diagonal(A, 0)
    deg = A.sum(axis=1)
    degree_hist = np.bincount(deg)
    degree_hist = degree_hist / degree_hist.sum()

    coeffs = np.zeros(g.n)
    for v in range(g.n):
        if deg[v] < 2:
            continue
        nbrs = np.flatnonzero(A[v])
        tri = A[np.ix_(nbrs, nbrs)].sum() / 2
        coeffs[v] = 2.0 * tri / (deg[v] * (deg[v] - 1))
    clustering_hist, _ = np.histogram(coeffs, bins=CLUSTERING_BINS,
                                      range=(0.0, 1.0 + 1e-9))
    clustering_hist = clustering_hist / clustering_hist.sum()

    orbit_hist = _orbit_histogram(A)
    return GraphStats(degree_hist, clustering_hist, orbit_hist)


def _connected4(A: np.ndarray, quad) -> bool:
    sub = A[np.ix_(quad, quad)]
    comp = sub.astype(bool) | np.eye(4, dtype=bool)
    for _ in range(2):  # reachability closure; diameter of K4 subsets <= 3
        comp = comp | (comp @ comp)
    return bool(comp.all())


def orbit_counts(g: Graph) -> np.ndarray:
    """Connected induced 4-node subgraphs through each node, by exhaustive
    enumeration of all C(n, 4) subsets."""
    if g.n > ORBIT_MAX_NODES:
        raise ValueError(
            f"orbit counting supports at most {ORBIT_MAX_NODES} nodes"
        )
    A = (g.adjacency > 0).astype(int)
    np.fill_diagonal(A, 0)
    counts = np.zeros(g.n, dtype=int)
    for quad in combinations(range(g.n), 4):
        if _connected4(A, quad):
            for v in quad:
                counts[v] += 1
    return counts


def _orbit_histogram(A: np.ndarray) -> np.ndarray:
    g = Graph(((A + A.T) > 0).astype(float))
    if g.n < 4:
        counts = np.zeros(g.n, dtype=int)
    else:
        counts = orbit_counts(g)
    hist = np.bincount(counts)
    return hist / hist.sum()


# -- MMD ----------------------------------------------------------------------


def _align(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = max(len(x), len(y))
    return (np.pad(x, (0, m - len(x))), np.pad(y, (0, m - len(y))))


def _tv(x: np.ndarray, y: np.ndarray) -> float:
    x, y = _align(x, y)
    return 0.5 * float(np.abs(x - y).sum())


def mmd(setA: list[GraphStats], setB: list[GraphStats], which: str,
        sigma: float = 1.0) -> float:
    """Gaussian-kernel MMD over total-variation distances between the
    selected per-graph histograms."""
    if not setA or not setB:
        raise ValueError("MMD requires nonempty sets")
    attr = {"degree": "degree_hist", "cluster": "clustering_hist",
            "orbit": "orbit_hist"}[which]
    hsA = [getattr(s, attr) for s in setA]
    hsB = [getattr(s, attr) for s in setB]

    def kmean(hs1, hs2):
        total = 0.0
        for a in hs1:
            for b in hs2:
                tv = _tv(a, b)
                total += np.exp(-(tv * tv) / (2.0 * sigma * sigma))
        return total / (len(hs1) * len(hs2))

    m2 = kmean(hsA, hsA) + kmean(hsB, hsB) - 2.0 * kmean(hsA, hsB)
    return float(np.sqrt(max(m2, 0.0)))


# -- ranking metrics ----------------------------------------------------------


def auc_ap(scores, labels) -> tuple[float, float]:
    """Mann-Whitney AUC (ties count half) and interpolation-free average
    precision."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need at least one positive and one negative")
    # rank-sum form of the pairwise statistic
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=float)
    sorted_scores = scores[order]
    i = 0
    r = 1.0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        avg = (r + r + (j - i)) / 2.0
        ranks[order[i:j + 1]] = avg
        r += j - i + 1
        i = j + 1
    auc = (ranks[labels == 1].sum() - len(pos) * (len(pos) + 1) / 2.0) \
        / (len(pos) * len(neg))

    desc = np.argsort(-scores, kind="stable")
    hits = 0
    ap = 0.0
    for rank, idx in enumerate(desc, start=1):
        if labels[idx] == 1:
            hits += 1
            ap += hits / rank
    ap /= len(pos)
    return float(auc), float(ap)


def edge_recon_metrics(A: np.ndarray, A_hat: np.ndarray) -> dict:
    """Accuracy/precision/recall of thresholded edge probabilities over the
    strict upper triangle (predicted positive iff probability > 0.5)."""
    A = np.asarray(A)
    A_hat = np.asarray(A_hat)
    if A.shape != A_hat.shape:
        raise ValueError("shape mismatch")
    iu, ju = np.triu_indices(A.shape[0], 1)
    truth = A[iu, ju] > 0
    pred = A_hat[iu, ju] > 0.5
    tp = int(np.sum(truth & pred))
    tn = int(np.sum(~truth & ~pred))
    fp = int(np.sum(~truth & pred))
    fn = int(np.sum(truth & ~pred))
    total = tp + tn + fp + fn
    return {
        "accuracy": (tp + tn) / total if total else 0.0,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
    }
