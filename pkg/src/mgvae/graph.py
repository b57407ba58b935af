"""Graph data model, ingestion, coarsening, and synthetic datasets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Graph",
    "EdgeSplit",
    "GraphFormatError",
    "load_graph",
    "save_graph_json",
    "induced_subgraph",
    "coarsen",
    "synth_community",
    "mask_edges",
    "degree_bucket_features",
]

DEGREE_BUCKETS = 8  # one-hot over degrees 0..6 and 7+


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph with optional node/edge features.

    The adjacency is a symmetric non-negative matrix; coarsened graphs
    store real edge counts in it.
    """

    adjacency: np.ndarray
    node_features: np.ndarray | None = None
    edge_features: np.ndarray | None = None

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise GraphFormatError("adjacency must be square")
        if not np.allclose(A, A.T):
            raise GraphFormatError("adjacency must be symmetric")
        if np.any(A < 0):
            raise GraphFormatError("adjacency entries must be non-negative")
        object.__setattr__(self, "adjacency", A)
        if self.node_features is not None:
            F = np.asarray(self.node_features, dtype=np.float64)
            if F.shape[0] != A.shape[0]:
                raise GraphFormatError("node feature row count mismatch")
            object.__setattr__(self, "node_features", F)
        if self.edge_features is not None:
            E = np.asarray(self.edge_features, dtype=np.float64)
            if E.shape[:2] != A.shape:
                raise GraphFormatError("edge feature shape mismatch")
            if not np.allclose(E, E.transpose(1, 0, 2)):
                raise GraphFormatError("edge features must be symmetric")
            object.__setattr__(self, "edge_features", E)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))

    def edge_list(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(iu.tolist(), ju.tolist()))

    def features_or_default(self) -> np.ndarray:
        if self.node_features is not None:
            return self.node_features
        return degree_bucket_features(self.adjacency)

    def permuted(self, sigma: np.ndarray) -> "Graph":
        """Relabel nodes: new index sigma[i] holds old node i."""
        inv = np.argsort(sigma)
        A = self.adjacency[np.ix_(inv, inv)]
        F = None if self.node_features is None else self.node_features[inv]
        E = None
        if self.edge_features is not None:
            E = self.edge_features[np.ix_(inv, inv)]
        return Graph(A, F, E)


def degree_bucket_features(A: np.ndarray) -> np.ndarray:
    """One-hot degree buckets (0..6, 7+); default features for bare graphs."""
    deg = (np.asarray(A) > 0).sum(axis=1)
    bucket = np.minimum(deg, DEGREE_BUCKETS - 1)
    F = np.zeros((len(deg), DEGREE_BUCKETS))
    F[np.arange(len(deg)), bucket] = 1.0
    return F


@dataclass
class EdgeSplit:
    """Held-out edge partition for link prediction."""

    train_graph: Graph
    train_pos: list[tuple[int, int]]
    val_pos: list[tuple[int, int]]
    val_neg: list[tuple[int, int]]
    test_pos: list[tuple[int, int]]
    test_neg: list[tuple[int, int]]


# -- I/O ---------------------------------------------------------------------


def load_graph(path, format: str = None) -> Graph:
    """Read an edge-list or JSON graph file.

    Edge list: optional "# nodes <n>" header, then "u v [w]" lines.
    JSON: {"n": int, "edges": [[u, v, w], ...], "node_features": optional}.
    """
    path = Path(path)
    if format is None:
        format = "json" if path.suffix == ".json" else "edge-list"
    text = path.read_text()
    if format == "json":
        return _graph_from_json(text)
    if format != "edge-list":
        raise GraphFormatError(f"unknown format {format!r}")
    declared_n = None
    edges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "nodes":
                declared_n = int(parts[1])
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"line {lineno}: expected 'u v [w]'")
        try:
            u, v = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise GraphFormatError(f"line {lineno}: parse failure") from None
        if u < 0 or v < 0:
            raise GraphFormatError(f"line {lineno}: negative node index")
        if w < 0:
            raise GraphFormatError(f"line {lineno}: negative weight")
        edges.append((u, v, w))
    n = declared_n if declared_n is not None else (
        max((max(u, v) for u, v, _ in edges), default=-1) + 1
    )
    if any(u >= n or v >= n for u, v, _ in edges):
        raise GraphFormatError("edge index exceeds declared node count")
    A = np.zeros((n, n))
    for u, v, w in edges:
        A[u, v] = w
        A[v, u] = w
    return Graph(A)


def _graph_from_json(text: str) -> Graph:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphFormatError(f"JSON parse failure: {e}") from None
    n = int(obj["n"])
    A = np.zeros((n, n))
    for edge in obj.get("edges", []):
        u, v = int(edge[0]), int(edge[1])
        w = float(edge[2]) if len(edge) > 2 else 1.0
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edge ({u},{v}) out of range")
        if w < 0:
            raise GraphFormatError("negative weight")
        A[u, v] = w
        A[v, u] = w
    F = obj.get("node_features")
    return Graph(A, None if F is None else np.asarray(F, dtype=np.float64))


def save_graph_json(path, g: Graph) -> None:
    obj = {
        "n": g.n,
        "edges": [[int(u), int(v), float(g.adjacency[u, v])]
                  for u, v in g.edge_list()],
    }
    if g.node_features is not None:
        obj["node_features"] = g.node_features.tolist()
    Path(path).write_text(json.dumps(obj))


# -- structure ops -----------------------------------------------------------


def induced_subgraph(g: Graph, nodes) -> Graph:
    nodes = list(nodes)
    if len(set(nodes)) != len(nodes):
        raise ValueError("duplicate node in subset")
    if any(v < 0 or v >= g.n for v in nodes):
        raise ValueError("node index out of range")
    idx = np.asarray(nodes, dtype=int)
    A = g.adjacency[np.ix_(idx, idx)]
    F = None if g.node_features is None else g.node_features[idx]
    E = None if g.edge_features is None else g.edge_features[np.ix_(idx, idx)]
    return Graph(A, F, E)


def coarsen(g: Graph, assignment) -> Graph:
    """Collapse each cluster to one node.

    Diagonal entries count intra-cluster edge weight (half the double
    sum); off-diagonals count cross-cluster weight. Equals Pi^T A Pi
    with a halved diagonal. Coarse node features come from the pooling
    network, not from here.
    """
    Pi = assignment.Pi
    if Pi.shape[0] != g.n:
        raise ValueError("assignment row count mismatch")
    if not np.array_equal(Pi.sum(axis=1), np.ones(g.n)):
        raise ValueError("assignment rows must be one-hot")
    coarse = Pi.T @ g.adjacency @ Pi
    coarse[np.diag_indices_from(coarse)] /= 2.0
    return Graph(coarse)


# -- datasets ----------------------------------------------------------------


def synth_community(n_min: int, n_max: int, count: int, p_in: float = 0.7,
                    p_out: float = 0.05, seed: int = 0,
                    rng: np.random.Generator = None) -> list[Graph]:
    """2-community planted-partition graphs with |V| uniform in [n_min, n_max].

    Odd sizes put the extra node in the first community.
    """
    if n_max < n_min:
        raise ValueError("n_max < n_min")
    if n_min < 2:
        raise ValueError("n_min must be at least 2")
    if not (0 <= p_out <= p_in <= 1):
        raise ValueError("require 0 <= p_out <= p_in <= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(count):
        n = int(rng.integers(n_min, n_max + 1))
        half = (n + 1) // 2
        comm = np.array([0] * half + [1] * (n - half))
        same = comm[:, None] == comm[None, :]
        prob = np.where(same, p_in, p_out)
        draw = rng.random((n, n))
        upper = np.triu(draw < prob, 1)
        A = (upper | upper.T).astype(np.float64)
        graphs.append(Graph(A))
    return graphs


def mask_edges(g: Graph, val_frac: float = 0.05, test_frac: float = 0.10,
               seed: int = 0) -> EdgeSplit:
    """Remove 15% of edges for validation/test; sample matching non-edges."""
    edges = g.edge_list()
    m = len(edges)
    if m < 20:
        raise ValueError("graph too small to mask edges (need >= 20)")
    n_val = int(round(val_frac * m))
    n_test = int(round(test_frac * m))
    if n_val < 1 or n_test < 1:
        raise ValueError("graph too small to satisfy split fractions")
    rng = np.random.default_rng(seed)
    order = rng.permutation(m)
    val_pos = [edges[i] for i in order[:n_val]]
    test_pos = [edges[i] for i in order[n_val:n_val + n_test]]
    train_pos = [edges[i] for i in order[n_val + n_test:]]
    A_train = np.zeros_like(g.adjacency)
    for u, v in train_pos:
        A_train[u, v] = g.adjacency[u, v]
        A_train[v, u] = g.adjacency[v, u]
    train_graph = Graph(A_train, g.node_features, g.edge_features)

    existing = set(edges)
    needed = n_val + n_test
    negs: list[tuple[int, int]] = []
    seen = set()
    attempts = 0
    while len(negs) < needed:
        attempts += 1
        if attempts > 100 * needed:
            raise ValueError("could not sample enough non-edges")
        u, v = rng.integers(0, g.n, size=2)
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in existing or key in seen:
            continue
        seen.add(key)
        negs.append(key)
    return EdgeSplit(
        train_graph=train_graph,
        train_pos=train_pos,
        val_pos=val_pos,
        val_neg=negs[:n_val],
        test_pos=test_pos,
        test_neg=negs[n_val:],
    )
