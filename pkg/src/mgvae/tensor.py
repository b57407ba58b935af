"""Dense float64 tensors with reverse-mode automatic differentiation.

The only nonstandard primitives are the permutation-friendly tensor
product and multi-axis contraction used by the higher-order message
passing layers; everything else is the usual micrograd-style tape over
numpy arrays.
"""

from __future__ import annotations

import string
import warnings

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "linear",
    "elementwise",
    "tensor_product",
    "contract",
    "concat",
    "matmul",
    "softplus",
    "softmax",
    "matinv",
    "logdet_psd",
    "grad_check",
    "DimensionError",
    "DomainError",
    "NumericError",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Operand values are outside an op's domain (e.g. log of <= 0)."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense row-major float64 array with an optional gradient buffer.

    `track=True` marks a leaf parameter; intermediate results inherit
    tracking from their parents. `backward()` on a scalar fills `.grad`
    on every tracked leaf reachable through the tape.
    """

    __slots__ = ("data", "grad", "track", "_parents", "_backward")

    def __init__(self, data, track: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.track = bool(track)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, track={self.track})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- tape ---------------------------------------------------------------

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.track for p in parents):
            out.track = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self):
        """Accumulate d(self)/d(leaf) into every tracked leaf's grad."""
        if self.size != 1:
            raise DimensionError("backward requires a scalar loss")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.track and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        touched_leaf = False
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.track:
                    node.grad = g if node.grad is None else node.grad + g
                    touched_leaf = True
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if not p.track or pg is None:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
        if not touched_leaf:
            warnings.warn("backward: loss is not connected to any tracked leaf")

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return elementwise(self, "add", other)

    __radd__ = __add__

    def __sub__(self, other):
        return elementwise(self, "sub", other)

    def __rsub__(self, other):
        return elementwise(as_tensor(other), "sub", self)

    def __mul__(self, other):
        return elementwise(self, "mul", other)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __truediv__(self, other):
        other = as_tensor(other)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return as_tensor(other) * self.reciprocal()

    def __matmul__(self, other):
        return matmul(self, other)

    def reciprocal(self) -> "Tensor":
        data = 1.0 / self.data
        return Tensor._make(data, (self,), lambda g: (-g * data * data,))

    def exp(self) -> "Tensor":
        return elementwise(self, "exp")

    def log(self) -> "Tensor":
        return elementwise(self, "log")

    def sigmoid(self) -> "Tensor":
        return elementwise(self, "sigmoid")

    def relu(self) -> "Tensor":
        return elementwise(self, "relu")

    def square(self) -> "Tensor":
        return self * self

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(data, (self,), back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),)
        )

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),)
        )

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(self.data[idx], (self,), back)

    def diagonal2(self) -> "Tensor":
        """Diagonal along the first two axes of an (n, n, ...) tensor."""
        if self.ndim < 2 or self.shape[0] != self.shape[1]:
            raise DimensionError("diagonal2 requires leading square axes")
        n = self.shape[0]
        idx = np.arange(n)
        data = self.data[idx, idx]
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            out[idx, idx] = g
            return (out,)

        return Tensor._make(data, (self,), back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise ops --------------------------------------------------------

_UNARY = {"sigmoid", "relu", "exp", "log"}
_BINARY = {"add", "mul", "sub"}


def elementwise(X, kind: str, Y=None) -> Tensor:
    """Pointwise op. Unary kinds: sigmoid | relu | exp | log.
    Binary kinds (broadcasting): add | mul | sub."""
    X = as_tensor(X)
    if kind in _UNARY:
        if kind == "sigmoid":
            data = np.where(
                X.data >= 0,
                1.0 / (1.0 + np.exp(-np.abs(X.data))),
                np.exp(-np.abs(X.data)) / (1.0 + np.exp(-np.abs(X.data))),
            )
            return Tensor._make(data, (X,), lambda g: (g * data * (1 - data),))
        if kind == "relu":
            data = np.maximum(X.data, 0.0)
            mask = (X.data > 0).astype(np.float64)
            return Tensor._make(data, (X,), lambda g: (g * mask,))
        if kind == "exp":
            data = np.exp(X.data)
            return Tensor._make(data, (X,), lambda g: (g * data,))
        if kind == "log":
            if np.any(X.data <= 0):
                raise DomainError("log of non-positive entry")
            xd = X.data
            return Tensor._make(np.log(xd), (X,), lambda g: (g / xd,))
    if kind not in _BINARY:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if Y is None:
        raise ValueError(f"binary kind {kind!r} needs a second operand")
    Y = as_tensor(Y)
    try:
        np.broadcast_shapes(X.shape, Y.shape)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    xs, ys = X.shape, Y.shape
    if kind == "add":
        data = X.data + Y.data
        back = lambda g: (_unbroadcast(g, xs), _unbroadcast(g, ys))
    elif kind == "sub":
        data = X.data - Y.data
        back = lambda g: (_unbroadcast(g, xs), _unbroadcast(-g, ys))
    else:
        xd, yd = X.data, Y.data
        data = xd * yd
        back = lambda g: (_unbroadcast(g * yd, xs), _unbroadcast(g * xd, ys))
    return Tensor._make(data, (X, Y), back)


def softplus(X) -> Tensor:
    """log(1 + exp(x)), computed stably; gradient is sigmoid(x)."""
    X = as_tensor(X)
    data = np.logaddexp(0.0, X.data)
    sig = 1.0 / (1.0 + np.exp(-np.clip(X.data, -500, 500)))
    return Tensor._make(data, (X,), lambda g: (g * sig,))


def softmax(X: Tensor, axis: int = -1) -> Tensor:
    m = Tensor(X.data.max(axis=axis, keepdims=True))
    e = (X - m).exp()
    return e / e.sum(axis=axis, keepdims=True)


# -- linear algebra ---------------------------------------------------------


def linear(X, W, b=None) -> Tensor:
    """Affine map over the last axis: Y[..., j] = sum_i X[..., i] W[i, j] + b[j]."""
    X, W = as_tensor(X), as_tensor(W)
    if X.shape[-1] != W.shape[0]:
        raise DimensionError(
            f"linear: last dim of X {X.shape} != first dim of W {W.shape}"
        )
    xd, wd = X.data, W.data
    data = np.tensordot(xd, wd, axes=([-1], [0]))
    lead = X.ndim - 1

    def back(g):
        gX = np.tensordot(g, wd, axes=([-1], [-1]))
        gW = np.tensordot(xd, g, axes=(list(range(lead)), list(range(lead))))
        return gX, gW

    out = Tensor._make(data, (X, W), back)
    if b is not None:
        out = out + as_tensor(b)
    return out


def matmul(A, B) -> Tensor:
    A, B = as_tensor(A), as_tensor(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {A.shape} @ {B.shape}")
    ad, bd = A.data, B.data
    return Tensor._make(
        ad @ bd, (A, B), lambda g: (g @ bd.T, ad.T @ g)
    )


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(data, tuple(tensors), back)


# -- tensor product and contraction -----------------------------------------


def tensor_product(A, B) -> Tensor:
    """Outer product: C[i..., j...] = A[i...] * B[j...]."""
    A, B = as_tensor(A), as_tensor(B)
    ad, bd = A.data, B.data
    a = A.ndim
    data = np.tensordot(ad, bd, axes=0)

    def back(g):
        gA = np.tensordot(g, bd, axes=(list(range(a, g.ndim)), list(range(bd.ndim))))
        gB = np.tensordot(ad, g, axes=(list(range(a)), list(range(a))))
        return gA, gB

    return Tensor._make(data, (A, B), back)


def contract(A, dims) -> Tensor:
    """Sum A over a shared index running along every axis in `dims`.

    Surviving axes keep their original relative order. All contracted
    axes must have one common length.
    """
    A = as_tensor(A)
    dims = sorted(set(int(d) for d in dims))
    if not dims:
        return A
    for d in dims:
        if d < 0 or d >= A.ndim:
            raise DimensionError(f"contract: axis {d} out of range for {A.shape}")
    n = A.shape[dims[0]]
    if any(A.shape[d] != n for d in dims):
        raise DimensionError("contract: contracted axes have unequal lengths")
    letters = list(string.ascii_lowercase)
    sub = []
    shared = letters[A.ndim]
    for ax in range(A.ndim):
        sub.append(shared if ax in dims else letters[ax])
    out_sub = "".join(letters[ax] for ax in range(A.ndim) if ax not in dims)
    data = np.einsum("".join(sub) + "->" + out_sub, A.data)
    shape = A.shape
    p = len(dims)

    def back(g):
        out = np.zeros(shape)
        view = np.moveaxis(out, dims, range(p))
        for i in range(n):
            view[(i,) * p] = g
        return (out,)

    return Tensor._make(data, (A,), back)


def matinv(A) -> Tensor:
    """Inverse of a square matrix; d(A^-1) = -A^-1 dA A^-1."""
    A = as_tensor(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError("matinv requires a square matrix")
    try:
        data = np.linalg.inv(A.data)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"matrix inversion failed: {e}") from None
    return Tensor._make(data, (A,), lambda g: (-data.T @ g @ data.T,))


def logdet_psd(A) -> Tensor:
    """log det of a symmetric positive-definite matrix via Cholesky."""
    A = as_tensor(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError("logdet_psd requires a square matrix")
    try:
        chol = np.linalg.cholesky(A.data)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(A.data)
        raise NumericError(
            f"Cholesky failed; matrix not PD (condition number {cond:.3e})"
        ) from None
    data = 2.0 * np.log(np.diag(chol)).sum()
    inv = np.linalg.inv(A.data)
    return Tensor._make(data, (A,), lambda g: (g * inv.T,))


class NumericError(ArithmeticError):
    """A numerical routine failed (singular matrix, non-finite value)."""


# -- validation -------------------------------------------------------------


def grad_check(f, x: Tensor, eps: float = 1e-5, indices=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor. `indices` optionally restricts
    the check to a subset of flat coordinates of `x`.
    """
    x = Tensor(np.array(x.data, copy=True), track=True)
    out = f(x)
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(x.data)).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(x.data)).data)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise DomainError("grad_check: f non-finite at perturbed point")
        num = (hi - lo) / (2 * eps)
        ana = analytic.reshape(-1)[i]
        denom = max(abs(ana), abs(num), 1e-8)
        worst = max(worst, abs(ana - num) / denom)
    return worst
