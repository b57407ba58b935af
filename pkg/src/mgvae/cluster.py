"""Learnable equivariant clustering plus fixed baselines.

The learnable path produces per-node cluster logits from an equivariant
message-passing stack, samples hard assignments with the Gumbel-max
trick (straight-through gradients), and is regularized toward balanced
cuts by a KL divergence to the uniform cluster-size distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA

from .equivariant import LayerParams, mpnn_stack
from .graph import Graph
from .tensor import Tensor, softmax

__all__ = [
    "ClusterAssignment",
    "BalanceStats",
    "cluster_logits",
    "argmax_assign",
    "gumbel_assign",
    "balance_kl",
    "balance_kl_soft",
    "spectral_baseline",
    "kmeans_baseline",
    "cluster_stats",
]


@dataclass(frozen=True)
class ClusterAssignment:
    """Hard partition of n nodes into K clusters (empty clusters allowed)."""

    pi: np.ndarray  # length-n cluster indices
    K: int

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=int)
        if pi.ndim != 1:
            raise ValueError("pi must be a 1-D index array")
        if np.any(pi < 0) or np.any(pi >= self.K):
            raise ValueError("cluster index out of range")
        object.__setattr__(self, "pi", pi)

    @property
    def n(self) -> int:
        return len(self.pi)

    @property
    def Pi(self) -> np.ndarray:
        out = np.zeros((self.n, self.K))
        out[np.arange(self.n), self.pi] = 1.0
        return out

    def sizes(self) -> np.ndarray:
        return np.bincount(self.pi, minlength=self.K)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.pi == k)


@dataclass(frozen=True)
class BalanceStats:
    min: int
    max: int
    std: float
    kl: float


# -- learnable clustering ----------------------------------------------------


def cluster_logits(g: Graph, params: LayerParams) -> Tensor:
    """Raw per-node cluster logits from an equivariant MPNN stack."""
    H = Tensor(g.features_or_default())
    return mpnn_stack(g.adjacency, H, params)


def argmax_assign(logits) -> ClusterAssignment:
    """Row-wise argmax; ties break toward the smallest cluster index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return ClusterAssignment(pi=np.argmax(data, axis=1), K=data.shape[1])


def gumbel_assign(logits: Tensor, rng: np.random.Generator,
                  noise: np.ndarray = None):
    """Gumbel-max categorical draw per row.

    Returns (assignment, straight_through) where straight_through is an
    n x K tensor that equals the hard one-hot matrix in the forward pass
    but routes gradients through the row softmax.
    """
    probs = softmax(logits, axis=-1)
    if noise is None:
        u = rng.random(logits.shape)
        noise = -np.log(-np.log(np.clip(u, 1e-12, 1 - 1e-12)))
    scores = noise + np.log(np.clip(probs.data, 1e-300, None))
    assignment = ClusterAssignment(
        pi=np.argmax(scores, axis=1), K=logits.shape[1]
    )
    hard = Tensor(assignment.Pi)
    straight_through = hard + (probs - probs.detach())
    return assignment, straight_through


def balance_kl(assignment: ClusterAssignment) -> float:
    """KL(P || uniform) over cluster-size fractions, in nats."""
    if assignment.n < 1:
        raise ValueError("empty assignment")
    P = assignment.sizes() / assignment.n
    nz = P > 0
    return float(np.sum(P[nz] * np.log(P[nz] * assignment.K)))


def balance_kl_soft(straight_through: Tensor) -> Tensor:
    """Differentiable balanced-cut loss on a straight-through assignment."""
    _, K = straight_through.shape
    P = straight_through.mean(axis=0)
    # the 1e-12 shift keeps empty clusters at the 0*log(0) = 0 convention
    return (P * ((P + 1e-12).log() + np.log(K))).sum()


def learn_balanced_clustering(g: Graph, K: int, epochs: int = 300,
                              lr: float = 1e-3, seed: int = 0,
                              hidden: int = 16):
    """Train a per-graph clustering network on the balanced-cut loss alone.

    Returns the argmax assignment of the trained logits and the trained
    stack.
    """
    from .optim import Adam
    from .equivariant import init_stack

    rng = np.random.default_rng(seed)
    d_in = g.features_or_default().shape[1]
    params = init_stack(1, [d_in, hidden, K], rng)
    # widen the init so the initial assignment is confident and varied;
    # near-uniform logits make every row receive the same balance gradient
    # and the argmax collapses into a single cluster
    for W, _ in params.weights:
        W.data *= 5.0
    named = {}
    for t, (W, b) in enumerate(params.weights):
        named[f"t{t}.W"] = W
        named[f"t{t}.b"] = b
    opt = Adam(named, lr=lr)
    for _ in range(epochs):
        logits = cluster_logits(g, params)
        _, st = gumbel_assign(logits, rng)
        loss = balance_kl_soft(st)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return argmax_assign(cluster_logits(g, params)), params


# -- fixed baselines ---------------------------------------------------------


def spectral_baseline(g: Graph, K: int, n_max: int = 10,
                      seed: int = 0) -> ClusterAssignment:
    """Random-walk Laplacian embedding (eigenvectors scaled by 1/eigenvalue;
    zero eigenvalues skip the division) followed by k-means.

    Keeping the zero-eigenvalue eigenvectors unscaled preserves the
    connected-component indicators on disconnected graphs."""
    if g.n <= n_max:
        raise ValueError(f"need more than {n_max} nodes for the embedding")
    A = g.adjacency
    deg = A.sum(axis=1)
    deg_safe = np.where(deg == 0, 1.0, deg)
    d_inv_sqrt = 1.0 / np.sqrt(deg_safe)
    # symmetric normalized Laplacian shares eigenvalues with D^-1 (D - A);
    # its eigenvectors map back through D^-1/2
    L_sym = np.eye(g.n) - d_inv_sqrt[:, None] * A * d_inv_sqrt[None, :]
    vals, vecs = eigh((L_sym + L_sym.T) / 2.0)
    emb_cols = []
    for lam, vec in zip(vals, vecs.T):
        col = d_inv_sqrt * vec
        if lam > 1e-10:
            col = col / lam
        emb_cols.append(col)
        if len(emb_cols) == n_max:
            break
    emb = np.stack(emb_cols, axis=1)
    return kmeans_baseline(emb, K, seed=seed, pca=False)


def kmeans_baseline(features: np.ndarray, K: int, seed: int = 0,
                    pca: bool = True) -> ClusterAssignment:
    """Lloyd's k-means, k-means++ init, 20 restarts; features above 10
    dimensions are first compressed by PCA."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] < K:
        raise ValueError("fewer points than clusters")
    if pca and X.shape[1] > 10:
        X = PCA(n_components=10, random_state=seed).fit_transform(X)
    km = KMeans(n_clusters=K, init="k-means++", n_init=20, max_iter=100,
                random_state=seed)
    labels = km.fit_predict(X)
    return ClusterAssignment(pi=labels, K=K)


def cluster_stats(assignment: ClusterAssignment) -> BalanceStats:
    sizes = assignment.sizes()
    return BalanceStats(
        min=int(sizes.min()),
        max=int(sizes.max()),
        std=float(sizes.std()),
        kl=balance_kl(assignment),
    )
