"""Gaussian latent machinery: diagonal and full-covariance posteriors,
reparameterized sampling, KL with jitter, and the learnable prior with
free / Hungarian matching that restores permutation invariance."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tensor import (
    DimensionError,
    Tensor,
    as_tensor,
    concat,
    logdet_psd,
    matinv,
    matmul,
)

__all__ = [
    "GaussianState",
    "LearnablePrior",
    "standard_prior",
    "init_prior",
    "sample",
    "gaussian_kl",
    "free_match",
    "hungarian_match",
    "matched_kl",
    "JITTER",
]

JITTER = 1e-4


class GaussianState:
    """Per-channel n-dimensional Gaussian: mean mu (n, d_z) and covariance
    factor L_fac. Diagonal states store per-node sigma as (n, d_z); full
    states store (n, k, d_z) with Sigma_c = L_c L_c^T."""

    def __init__(self, mu, L_fac, diagonal: bool):
        self.mu = as_tensor(mu)
        self.L_fac = as_tensor(L_fac)
        self.diagonal = diagonal
        if diagonal:
            if self.L_fac.shape != self.mu.shape:
                raise DimensionError("diagonal L_fac must match mu's shape")
        else:
            if self.L_fac.ndim != 3 or self.L_fac.shape[0] != self.mu.shape[0] \
                    or self.L_fac.shape[2] != self.mu.shape[1]:
                raise DimensionError("full L_fac must be (n, k, d_z)")

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def d_z(self) -> int:
        return self.mu.shape[1]

    def cov_channel(self, c: int) -> Tensor:
        """Sigma_c as a dense (n, n) tensor expression."""
        if self.diagonal:
            sig = self.L_fac[:, c]
            var = sig * sig
            eye = Tensor(np.eye(self.n))
            return var.reshape(self.n, 1) * eye
        L = self.L_fac[:, :, c]
        return matmul(L, L.T)


class LearnablePrior:
    """Trainable equivariant prior with m support rows per channel."""

    def __init__(self, mu_hat: Tensor, L_hat: Tensor):
        self.mu = as_tensor(mu_hat)
        self.L_fac = as_tensor(L_hat)
        self.diagonal = False
        if self.L_fac.ndim != 3 or self.L_fac.shape[0] != self.mu.shape[0] \
                or self.L_fac.shape[2] != self.mu.shape[1]:
            raise DimensionError("prior L_hat must be (m, m, d_z)")

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    n = m

    @property
    def d_z(self) -> int:
        return self.mu.shape[1]

    def cov_channel(self, c: int) -> Tensor:
        L = self.L_fac[:, :, c]
        return matmul(L, L.T)


def standard_prior(n: int, d_z: int) -> GaussianState:
    return GaussianState(np.zeros((n, d_z)), np.ones((n, d_z)), diagonal=True)


def init_prior(m: int, d_z: int, rng: np.random.Generator) -> LearnablePrior:
    mu_hat = Tensor(rng.normal(0.0, 0.5, size=(m, d_z)), track=True)
    L = np.stack([np.eye(m) for _ in range(d_z)], axis=-1)
    L = L + rng.normal(0.0, 0.01, size=L.shape)
    return LearnablePrior(Tensor(mu_hat.data, track=True), Tensor(L, track=True))


# -- sampling ----------------------------------------------------------------


def sample(state: GaussianState, eps) -> Tensor:
    """Reparameterized draw z = mu + L eps (per channel for full states)."""
    eps = as_tensor(eps)
    if eps.shape != (state.n, state.d_z):
        raise DimensionError(
            f"eps shape {eps.shape} != {(state.n, state.d_z)}"
        )
    if state.diagonal:
        return state.mu + state.L_fac * eps
    cols = []
    for c in range(state.d_z):
        L = state.L_fac[:, :, c]
        if L.shape[0] != L.shape[1]:
            raise DimensionError("sampling requires square covariance factors")
        cols.append(matmul(L, eps[:, c].reshape(-1, 1)))
    return state.mu + concat(cols, axis=1)


# -- KL divergence -----------------------------------------------------------


def gaussian_kl(post: GaussianState, prior, jitter: float = JITTER) -> Tensor:
    """KL(post || prior), summed over the d_z independent channels.

    Both covariances get `jitter` added on the diagonal before any
    inversion or determinant; determinants go through Cholesky.
    """
    if post.d_z != prior.d_z or post.n != prior.mu.shape[0]:
        raise DimensionError("posterior/prior shapes do not match")
    n = post.n
    if post.diagonal and prior.diagonal:
        s2 = post.L_fac * post.L_fac + jitter
        sh2 = prior.L_fac * prior.L_fac + jitter
        d = prior.mu - post.mu
        per = s2 / sh2 + (d * d) / sh2 - 1.0 + sh2.log() - s2.log()
        return per.sum() * 0.5
    eye = Tensor(jitter * np.eye(n))
    total = Tensor(0.0)
    for c in range(post.d_z):
        Sig = post.cov_channel(c) + eye
        Sig_hat = prior.cov_channel(c) + eye
        inv_hat = matinv(Sig_hat)
        tr = (inv_hat * Sig).sum()
        d = (prior.mu[:, c] - post.mu[:, c]).reshape(n, 1)
        quad = matmul(matmul(d.T, inv_hat), d).sum()
        term = tr + quad - float(n) + logdet_psd(Sig_hat) - logdet_psd(Sig)
        total = total + term * 0.5
    return total


# -- matching ----------------------------------------------------------------


def free_match(mu, mu_hat) -> np.ndarray:
    """assignment[i] = index of the prior row nearest to posterior row i."""
    mu = mu.data if isinstance(mu, Tensor) else np.asarray(mu)
    mu_hat = mu_hat.data if isinstance(mu_hat, Tensor) else np.asarray(mu_hat)
    if mu_hat.shape[0] < 1:
        raise ValueError("empty prior")
    d = np.linalg.norm(mu[:, None, :] - mu_hat[None, :, :], axis=2)
    return np.argmin(d, axis=1)


def hungarian_match(mu, mu_hat) -> np.ndarray:
    """Minimum-cost bijective assignment between equal-size row sets."""
    mu = mu.data if isinstance(mu, Tensor) else np.asarray(mu)
    mu_hat = mu_hat.data if isinstance(mu_hat, Tensor) else np.asarray(mu_hat)
    if mu.shape[0] != mu_hat.shape[0]:
        raise DimensionError("Hungarian matching needs equal row counts")
    cost = np.linalg.norm(mu[:, None, :] - mu_hat[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def matched_kl(post: GaussianState, prior: LearnablePrior,
               mode: str = "free", jitter: float = JITTER) -> Tensor:
    """Align the prior's rows to the posterior before the KL.

    The assignment is held constant within a step; gradients flow into
    the gathered prior entries and the posterior.
    """
    if mode == "free":
        a = free_match(post.mu, prior.mu)
    elif mode == "hungarian":
        a = hungarian_match(post.mu, prior.mu)
    else:
        raise ValueError(f"unknown matching mode {mode!r}")
    # gathering rows of L_hat gathers the matching Sigma_hat sub-blocks,
    # since (L[a] L[a]^T)_{ij} = Sigma[a_i, a_j]
    aligned = LearnablePrior.__new__(LearnablePrior)
    aligned.mu = prior.mu[a]
    aligned.L_fac = prior.L_fac[a]
    aligned.diagonal = False
    return gaussian_kl(post, aligned, jitter=jitter)
