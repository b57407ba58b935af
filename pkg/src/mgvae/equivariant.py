"""Permutation-equivariant message passing and invariant readouts.

First-order layers are degree-normalized MPNN updates; second-order
layers push messages indexed by node pairs through tensor products with
the adjacency followed by pairwise axis contractions.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    as_tensor,
    concat,
    contract,
    elementwise,
    linear,
    matmul,
    tensor_product,
)

__all__ = [
    "LayerParams",
    "init_stack",
    "mpnn_layer",
    "mpnn_stack",
    "promote_features",
    "second_order_layer",
    "second_order_stack",
    "contract_to_first_order",
    "readout_invariant",
]

# all C(4,2) unordered axis pairs of the order-4 product tensor,
# lexicographic
PAIRS = list(combinations(range(4), 2))


def _activate(X: Tensor, gamma: str) -> Tensor:
    if gamma == "identity":
        return X
    return elementwise(X, gamma)


@dataclass
class LayerParams:
    """A stack of per-channel affine maps with a nonlinearity between them.

    The final layer is left linear (raw logits / latents); callers apply
    their own output transform.
    """

    order: int
    weights: list[tuple[Tensor, Tensor]]
    gamma: str = "sigmoid"

    @property
    def depth(self) -> int:
        return len(self.weights)


def init_stack(order: int, dims: list[int], rng: np.random.Generator,
               gamma: str = "sigmoid", scale: float = None) -> LayerParams:
    """Glorot-style random stack; dims = [d_in, hidden..., d_out]."""
    if len(dims) < 2:
        raise ValueError("need at least input and output widths")
    weights = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        s = scale if scale is not None else np.sqrt(2.0 / (d_in + d_out))
        W = Tensor(rng.normal(0.0, s, size=(d_in, d_out)), track=True)
        b = Tensor(np.zeros(d_out), track=True)
        weights.append((W, b))
    return LayerParams(order=order, weights=weights, gamma=gamma)


def _norm_adjacency(A: np.ndarray, self_loops: bool) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if self_loops:
        A = A + np.eye(A.shape[0])
    deg = A.sum(axis=1)
    if np.any(deg == 0):
        # only reachable with self_loops=False on isolated nodes
        deg = np.where(deg == 0, 1.0, deg)
    return A / deg[:, None]


def mpnn_layer(A, H, W, b=None, gamma: str = "sigmoid",
               self_loops: bool = True) -> Tensor:
    """H' = gamma(D^-1 (A + I) H W); the raw paper rule is self_loops=False."""
    H = as_tensor(H)
    A = np.asarray(A.data if isinstance(A, Tensor) else A, dtype=np.float64)
    if H.shape[0] != A.shape[0]:
        raise DimensionError("mpnn_layer: feature row count mismatch")
    M = matmul(Tensor(_norm_adjacency(A, self_loops)), H)
    return _activate(linear(M, W, b), gamma)


def mpnn_stack(A, H, params: LayerParams) -> Tensor:
    for i, (W, b) in enumerate(params.weights):
        gamma = params.gamma if i + 1 < params.depth else "identity"
        H = mpnn_layer(A, H, W, b, gamma=gamma)
    return H


def promote_features(F_v, F_e=None) -> Tensor:
    """Lift node features onto the diagonal of a second-order message and
    concatenate the edge-feature channels."""
    parts = []
    if F_v is not None:
        F_v = as_tensor(F_v)
        n, d_v = F_v.shape
        eye = np.eye(n)[:, :, None]
        diag = elementwise(F_v.reshape(n, 1, d_v), "mul", Tensor(eye))
        parts.append(diag)
    if F_e is not None:
        F_e = as_tensor(F_e)
        parts.append(F_e)
    if not parts:
        raise DimensionError("promote_features: no features given")
    if len(parts) == 1:
        return parts[0]
    return concat(parts, axis=-1)


def second_order_layer(A, H, W, b=None, gamma: str = "sigmoid") -> Tensor:
    """One second-order update: per channel, form the order-4 product of the
    adjacency with the message, contract along each of the six axis pairs,
    concatenate, and map channels through an affine layer + nonlinearity."""
    H = as_tensor(H)
    if H.ndim != 3 or H.shape[0] != H.shape[1]:
        raise DimensionError("second_order_layer expects an n x n x d message")
    n, _, d = H.shape
    if n == 0:
        raise DimensionError("empty graph")
    A_t = as_tensor(A.data if isinstance(A, Tensor) else np.asarray(A, float))
    pieces = []
    for c in range(d):
        prod = tensor_product(A_t, H[:, :, c])
        for pair in PAIRS:
            pieces.append(contract(prod, pair).reshape(n, n, 1))
    stacked = concat(pieces, axis=-1)
    return _activate(linear(stacked, W, b), gamma)


def second_order_stack(A, H, params: LayerParams) -> Tensor:
    for i, (W, b) in enumerate(params.weights):
        gamma = params.gamma if i + 1 < params.depth else "identity"
        H = second_order_layer(A, H, W, b, gamma=gamma)
    return H


def contract_to_first_order(H, W=None, b=None) -> Tensor:
    """Reduce an n x n x d message to node latents: concatenate the row-sum
    and diagonal contractions per channel, then an optional affine map."""
    H = as_tensor(H)
    if H.ndim != 3 or H.shape[0] != H.shape[1]:
        raise DimensionError("contract_to_first_order expects n x n x d")
    rows = contract(H, (1,))
    diag = H.diagonal2()
    Z = concat([rows, diag], axis=-1)
    if W is not None:
        Z = linear(Z, W, b)
    return Z


def readout_invariant(Z) -> Tensor:
    """Column-wise mean over nodes; permutation invariant."""
    Z = as_tensor(Z)
    if Z.shape[0] == 0:
        raise DimensionError("readout of an empty node set")
    return Z.mean(axis=0)
