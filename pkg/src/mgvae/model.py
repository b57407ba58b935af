"""The multiresolution hierarchy: encoding, decoding, losses, training,
and graph generation.

A model with L levels clusters the input graph bottom-up: level L is the
input graph, each level's assignment coarsens it into the next, and the
single top cluster pools everything into one node. Every level carries
per-cluster Gaussian posteriors and sampled latents.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import cluster as clu
from .checkpoint import load_checkpoint, save_checkpoint
from .equivariant import (
    LayerParams,
    contract_to_first_order,
    init_stack,
    mpnn_stack,
    promote_features,
    readout_invariant,
    second_order_stack,
)
from .graph import Graph, coarsen, induced_subgraph
from .optim import Adam
from .probabilistic import (
    GaussianState,
    LearnablePrior,
    gaussian_kl,
    matched_kl,
    sample,
    standard_prior,
)
from .tensor import NumericError, Tensor, concat, linear, matmul, softplus

__all__ = [
    "ModelConfig",
    "Model",
    "Hierarchy",
    "Level",
    "encode_hierarchy",
    "decode_local",
    "decode_global",
    "elbo_loss",
    "total_loss",
    "mgn_supervised_loss",
    "train",
    "generate",
]


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 2
    clusters: tuple = (1, 2)  # K per level, index 0 = top; clusters[0] == 1
    order: tuple = None  # message-passing order per level, default all 1
    hidden: int = 16
    depth: int = 2
    d_z: int = 4
    feature_dim: int = 8
    lambdas: tuple = None  # balanced-cut weight per level, default all 1.0
    prior_kind: str = "standard"  # standard | learnable
    prior_m: int = 16  # support rows of the learnable prior
    bottom_decoder: str = "local"  # local | dot | mlp
    decoder_hidden: int = 64
    max_nodes: int = 20  # capacity of the mlp decoder
    recon_features: bool = False

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        if len(self.clusters) != self.levels or self.clusters[0] != 1:
            raise ValueError("clusters must list one K per level with K[0] == 1")
        if any(k < 1 for k in self.clusters):
            raise ValueError("cluster counts must be positive")
        if self.order is None:
            object.__setattr__(self, "order", (1,) * self.levels)
        if self.lambdas is None:
            object.__setattr__(self, "lambdas", (1.0,) * self.levels)
        if self.bottom_decoder not in ("local", "dot", "mlp"):
            raise ValueError(f"unknown bottom decoder {self.bottom_decoder!r}")


@dataclass
class Level:
    index: int  # level number, levels..1 (levels = input graph)
    graph: Graph
    assignment: clu.ClusterAssignment
    straight_through: Tensor | None
    posteriors: list[GaussianState]
    Z: Tensor  # node latents in the level graph's node order
    features: Tensor  # input node features of this level


@dataclass
class Hierarchy:
    levels: list[Level]  # ordered bottom (input) to top

    @property
    def bottom(self) -> Level:
        return self.levels[0]


class Model:
    """Parameter container for the full hierarchy."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.cluster_nets: dict[int, LayerParams] = {}
        self.encoder_nets: dict[int, LayerParams] = {}
        self.priors: dict[int, LearnablePrior] = {}
        self.size_samples: list[int] = []
        self.edge_samples: list[int] = []

        for pos, lev in enumerate(self._level_numbers()):
            d_in = cfg.feature_dim if lev == cfg.levels else cfg.d_z
            K = cfg.clusters[lev - 1]
            if K > 1:
                net = init_stack(1, [d_in] + [cfg.hidden] * (cfg.depth - 1) + [K],
                                 rng)
                self.cluster_nets[lev] = net
                self._register(f"clu.l{lev}", net)
            order = cfg.order[lev - 1]
            if order == 1:
                enc = init_stack(1, [d_in] + [cfg.hidden] * cfg.depth, rng)
            else:
                # each second-order layer consumes 6x its input channels
                enc = LayerParams(order=2, weights=[], gamma="sigmoid")
                widths = [d_in + 1] + [cfg.hidden] * cfg.depth
                for w_in, w_out in zip(widths[:-1], widths[1:]):
                    s = np.sqrt(2.0 / (6 * w_in + w_out))
                    W = Tensor(rng.normal(0, s, size=(6 * w_in, w_out)),
                               track=True)
                    b = Tensor(np.zeros(w_out), track=True)
                    enc.weights.append((W, b))
            self.encoder_nets[lev] = enc
            self._register(f"enc.l{lev}", enc)
            if order == 1:
                self._add(f"enc.l{lev}.mu.W",
                          rng.normal(0, 0.3, (cfg.hidden, cfg.d_z)))
                self._add(f"enc.l{lev}.mu.b", np.zeros(cfg.d_z))
                self._add(f"enc.l{lev}.sig.W",
                          rng.normal(0, 0.1, (cfg.hidden, cfg.d_z)))
                self._add(f"enc.l{lev}.sig.b", np.zeros(cfg.d_z))
            else:
                self._add(f"enc.l{lev}.mu.W",
                          rng.normal(0, 0.3, (2 * cfg.hidden, cfg.d_z)))
                self._add(f"enc.l{lev}.mu.b", np.zeros(cfg.d_z))
                self._add(f"enc.l{lev}.cov.W",
                          rng.normal(0, 0.1, (cfg.hidden, cfg.d_z)))
                self._add(f"enc.l{lev}.cov.b", np.zeros(cfg.d_z))
            if cfg.prior_kind == "learnable":
                mu_hat = Tensor(rng.normal(0, 0.5, (cfg.prior_m, cfg.d_z)),
                                track=True)
                L0 = np.stack([np.eye(cfg.prior_m)] * cfg.d_z, axis=-1)
                L0 += rng.normal(0, 0.01, L0.shape)
                L_hat = Tensor(L0, track=True)
                self.priors[lev] = LearnablePrior(mu_hat, L_hat)
                self.params[f"prior.l{lev}.mu_hat"] = mu_hat
                self.params[f"prior.l{lev}.L_hat"] = L_hat

        if cfg.bottom_decoder == "mlp":
            d_flat = cfg.max_nodes * cfg.d_z
            self._add("dec.mlp.0.W",
                      rng.normal(0, np.sqrt(2.0 / (d_flat + cfg.decoder_hidden)),
                                 (d_flat, cfg.decoder_hidden)))
            self._add("dec.mlp.0.b", np.zeros(cfg.decoder_hidden))
            self._add("dec.mlp.1.W",
                      rng.normal(0, np.sqrt(2.0 / (cfg.decoder_hidden +
                                                   cfg.max_nodes**2)),
                                 (cfg.decoder_hidden, cfg.max_nodes**2)))
            self._add("dec.mlp.1.b", np.zeros(cfg.max_nodes**2))

        head_in = cfg.levels * cfg.d_z
        self._add("head.0.W", rng.normal(0, np.sqrt(2.0 / (head_in + cfg.hidden)),
                                         (head_in, cfg.hidden)))
        self._add("head.0.b", np.zeros(cfg.hidden))
        self._add("head.1.W", rng.normal(0, np.sqrt(2.0 / (cfg.hidden + 1)),
                                         (cfg.hidden, 1)))
        self._add("head.1.b", np.zeros(1))

        if cfg.recon_features:
            self._add("feat.W", rng.normal(0, 0.1, (cfg.d_z, cfg.feature_dim)))
            self._add("feat.b", np.zeros(cfg.feature_dim))

    def _level_numbers(self):
        return range(self.cfg.levels, 0, -1)

    def _add(self, name: str, data) -> Tensor:
        t = Tensor(data, track=True)
        self.params[name] = t
        return t

    def _register(self, prefix: str, net: LayerParams):
        for t, (W, b) in enumerate(net.weights):
            self.params[f"{prefix}.t{t}.W"] = W
            self.params[f"{prefix}.t{t}.b"] = b

    # -- persistence --------------------------------------------------------

    def save(self, path):
        tensors = dict(self.params)
        cfg = self.cfg
        tensors["meta.config"] = Tensor([
            cfg.levels, cfg.hidden, cfg.depth, cfg.d_z, cfg.feature_dim,
            cfg.prior_m, cfg.decoder_hidden, cfg.max_nodes,
            {"standard": 0, "learnable": 1}[cfg.prior_kind],
            {"local": 0, "dot": 1, "mlp": 2}[cfg.bottom_decoder],
            1.0 if cfg.recon_features else 0.0,
        ])
        tensors["meta.clusters"] = Tensor(list(cfg.clusters))
        tensors["meta.order"] = Tensor(list(cfg.order))
        tensors["meta.lambdas"] = Tensor(list(cfg.lambdas))
        tensors["meta.size_samples"] = Tensor(self.size_samples or [0])
        tensors["meta.edge_samples"] = Tensor(self.edge_samples or [0])
        save_checkpoint(path, tensors)

    @classmethod
    def load(cls, path) -> "Model":
        tensors = load_checkpoint(path)
        m = tensors["meta.config"].data
        cfg = ModelConfig(
            levels=int(m[0]),
            clusters=tuple(int(k) for k in tensors["meta.clusters"].data),
            order=tuple(int(o) for o in tensors["meta.order"].data),
            hidden=int(m[1]), depth=int(m[2]), d_z=int(m[3]),
            feature_dim=int(m[4]),
            lambdas=tuple(float(x) for x in tensors["meta.lambdas"].data),
            prior_kind=["standard", "learnable"][int(m[8])],
            prior_m=int(m[5]),
            bottom_decoder=["local", "dot", "mlp"][int(m[9])],
            decoder_hidden=int(m[6]), max_nodes=int(m[7]),
            recon_features=bool(m[10]),
        )
        model = cls(cfg, seed=0)
        for name in model.params:
            model.params[name].data = np.array(tensors[name].data)
        model.size_samples = [int(x) for x in tensors["meta.size_samples"].data
                              if x > 0]
        model.edge_samples = [int(x) for x in tensors["meta.edge_samples"].data
                              if x >= 0]
        return model

    # -- encoders ------------------------------------------------------------

    def encode_cluster(self, lev: int, sub_adj: np.ndarray,
                       feats: Tensor) -> GaussianState:
        cfg = self.cfg
        enc = self.encoder_nets[lev]
        n_k = sub_adj.shape[0]
        if enc.order == 1:
            H = mpnn_stack(sub_adj, feats, enc)
            mu = linear(H, self.params[f"enc.l{lev}.mu.W"],
                        self.params[f"enc.l{lev}.mu.b"])
            log_sig = linear(H, self.params[f"enc.l{lev}.sig.W"],
                             self.params[f"enc.l{lev}.sig.b"])
            return GaussianState(mu, log_sig.exp(), diagonal=True)
        H0 = promote_features(feats, Tensor(sub_adj[:, :, None]))
        HT = second_order_stack(sub_adj, H0, enc)
        mu = linear(contract_to_first_order(HT),
                    self.params[f"enc.l{lev}.mu.W"],
                    self.params[f"enc.l{lev}.mu.b"])
        L_fac = linear(HT, self.params[f"enc.l{lev}.cov.W"],
                       self.params[f"enc.l{lev}.cov.b"])
        return GaussianState(mu, L_fac, diagonal=False)

    def prior_for(self, lev: int, n: int):
        if self.cfg.prior_kind == "learnable":
            return self.priors[lev]
        return standard_prior(n, self.cfg.d_z)


# -- hierarchy construction ---------------------------------------------------


def encode_hierarchy(g: Graph, model: Model, mode: str = "train",
                     rng: np.random.Generator = None,
                     fixed_assignments: list | None = None) -> Hierarchy:
    """Build the full multilevel encoding of `g`.

    Train mode samples cluster assignments (Gumbel-max) and latents
    (reparameterized); eval mode uses argmax assignments and posterior
    means, making the pipeline deterministic and equivariant.
    """
    if g.n == 0:
        raise ValueError("empty graph")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    cfg = model.cfg
    levels: list[Level] = []
    cur_graph = g
    cur_feat = Tensor(g.features_or_default())
    for pos, lev in enumerate(model._level_numbers()):
        n = cur_graph.n
        K = cfg.clusters[lev - 1]
        if K > n:
            warnings.warn(f"level {lev}: clamping K={K} to n={n}")
            K = n
        st = None
        if fixed_assignments is not None:
            assignment = fixed_assignments[pos]
        elif K == 1:
            assignment = clu.ClusterAssignment(pi=np.zeros(n, dtype=int), K=1)
        else:
            logits = mpnn_stack(cur_graph.adjacency, cur_feat,
                                model.cluster_nets[lev])
            if K < cfg.clusters[lev - 1]:
                logits = logits[:, :K]
            if mode == "train":
                assignment, st = clu.gumbel_assign(logits, rng)
            else:
                assignment = clu.argmax_assign(logits)
        posteriors = []
        z_parts = []
        order_idx = []
        pooled_rows = []
        for k in range(assignment.K):
            members = assignment.members(k)
            if len(members) == 0:
                pooled_rows.append(Tensor(np.zeros((1, cfg.d_z))))
                continue
            sub = induced_subgraph(cur_graph, members)
            feats_k = cur_feat[members]
            post = model.encode_cluster(lev, sub.adjacency, feats_k)
            if mode == "train":
                eps = rng.standard_normal((len(members), cfg.d_z))
            else:
                eps = np.zeros((len(members), cfg.d_z))
            Z_k = sample(post, eps)
            posteriors.append(post)
            z_parts.append(Z_k)
            order_idx.extend(members.tolist())
            pooled_rows.append(readout_invariant(Z_k).reshape(1, cfg.d_z))
        Z_cat = concat(z_parts, axis=0) if len(z_parts) > 1 else z_parts[0]
        inv = np.argsort(np.asarray(order_idx))
        Z = Z_cat[inv]
        levels.append(Level(index=lev, graph=cur_graph, assignment=assignment,
                            straight_through=st, posteriors=posteriors, Z=Z,
                            features=cur_feat))
        if lev > 1:
            cur_graph = coarsen(cur_graph, assignment)
            cur_feat = concat(pooled_rows, axis=0) if len(pooled_rows) > 1 \
                else pooled_rows[0]
    return Hierarchy(levels=levels)


# -- decoders -----------------------------------------------------------------


def decode_local(Z) -> Tensor:
    """Dot-product edge probabilities sigmoid(Z Z^T)."""
    return decode_local_logits(Z).sigmoid()


def decode_local_logits(Z) -> Tensor:
    Z = Z if isinstance(Z, Tensor) else Tensor(Z)
    return matmul(Z, Z.T)


def decode_global(Z, model: Model) -> Tensor:
    """Fully-connected decoder on the padded latent matrix; symmetric
    probabilities. Not permutation equivariant by construction."""
    return decode_global_logits(Z, model).sigmoid()


def decode_global_logits(Z, model: Model) -> Tensor:
    cfg = model.cfg
    Z = Z if isinstance(Z, Tensor) else Tensor(Z)
    n = Z.shape[0]
    if n > cfg.max_nodes:
        raise ValueError(f"{n} nodes exceeds decoder capacity {cfg.max_nodes}")
    if n < cfg.max_nodes:
        pad = Tensor(np.zeros((cfg.max_nodes - n, cfg.d_z)))
        Z = concat([Z, pad], axis=0)
    flat = Z.reshape(1, cfg.max_nodes * cfg.d_z)
    h = linear(flat, model.params["dec.mlp.0.W"],
               model.params["dec.mlp.0.b"]).sigmoid()
    out = linear(h, model.params["dec.mlp.1.W"], model.params["dec.mlp.1.b"])
    M = out.reshape(cfg.max_nodes, cfg.max_nodes)
    return (M + M.T) * 0.5


# -- losses -------------------------------------------------------------------


def _bce_from_logits(logits: Tensor, target: np.ndarray,
                     mask: np.ndarray = None) -> Tensor:
    """Sum of per-entry binary cross-entropies, from raw logits."""
    t = Tensor(np.asarray(target, dtype=np.float64))
    per = softplus(logits) - logits * t
    if mask is not None:
        per = per * Tensor(np.asarray(mask, dtype=np.float64))
    return per.sum()


def _level_targets(level: Level, bottom: bool) -> np.ndarray:
    A = (level.graph.adjacency > 0).astype(np.float64)
    if bottom:
        np.fill_diagonal(A, 0.0)
    return A


def elbo_loss(h: Hierarchy, model: Model, parts: dict = None) -> Tensor:
    """Negative hierarchical ELBO: per-level reconstruction BCE plus the
    (matched) KL of every cluster posterior to its level prior."""
    cfg = model.cfg
    recon = Tensor(0.0)
    kl = Tensor(0.0)
    for pos, level in enumerate(h.levels):
        bottom = pos == 0
        target = _level_targets(level, bottom)
        if bottom and cfg.bottom_decoder in ("dot", "mlp"):
            n = level.graph.n
            if cfg.bottom_decoder == "dot":
                logits = decode_local_logits(level.Z)
                mask = np.ones((n, n)) - np.eye(n)
            else:
                logits = decode_global_logits(level.Z, model)
                mask = np.zeros((cfg.max_nodes, cfg.max_nodes))
                mask[:n, :n] = 1.0 - np.eye(n)
                padded = np.zeros((cfg.max_nodes, cfg.max_nodes))
                padded[:n, :n] = target
                target = padded
            recon = recon + _bce_from_logits(logits, target, mask)
        else:
            for k in range(level.assignment.K):
                members = level.assignment.members(k)
                if len(members) == 0:
                    continue
                sub_target = target[np.ix_(members, members)]
                Z_k = level.Z[members]
                logits = decode_local_logits(Z_k)
                recon = recon + _bce_from_logits(logits, sub_target)
        for post in level.posteriors:
            if cfg.prior_kind == "learnable":
                kl = kl + matched_kl(post, model.priors[level.index],
                                     mode="free")
            else:
                kl = kl + gaussian_kl(post, standard_prior(post.n, cfg.d_z))
        if cfg.recon_features:
            pred = linear(level.Z, model.params["feat.W"],
                          model.params["feat.b"])
            diff = pred - level.features.detach()
            recon = recon + (diff * diff).sum()
    if parts is not None:
        parts["recon"] = float(recon.data)
        parts["kl"] = float(kl.data)
    return recon + kl


def balance_term(h: Hierarchy, model: Model) -> Tensor:
    total = Tensor(0.0)
    for level in h.levels:
        lam = model.cfg.lambdas[level.index - 1]
        if lam == 0:
            continue
        if level.straight_through is not None:
            total = total + lam * clu.balance_kl_soft(level.straight_through)
        else:
            total = total + lam * clu.balance_kl(level.assignment)
    return total


def total_loss(h: Hierarchy, model: Model, parts: dict = None) -> Tensor:
    elbo = elbo_loss(h, model, parts)
    bal = balance_term(h, model)
    if parts is not None:
        parts["balance"] = float(bal.data)
    return elbo + bal


def mgn_supervised_loss(g: Graph, y: float, model: Model,
                        rng: np.random.Generator = None,
                        h: Hierarchy = None) -> Tensor:
    """Squared-error regression from concatenated per-level mean latents,
    plus the balanced-cut penalties."""
    if h is None:
        h = encode_hierarchy(g, model, mode="train", rng=rng)
    readouts = [readout_invariant(level.Z).reshape(1, model.cfg.d_z)
                for level in h.levels]
    x = concat(readouts, axis=1)
    hdn = linear(x, model.params["head.0.W"], model.params["head.0.b"]).sigmoid()
    pred = linear(hdn, model.params["head.1.W"], model.params["head.1.b"])
    err = pred - Tensor([[float(y)]])
    return (err * err).sum() + balance_term(h, model)


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    trace: list[dict]  # per-epoch mean {loss, recon, kl, balance}


def train(dataset: list[Graph], model: Model, lr: float = 1e-3,
          epochs: int = 100, seed: int = 0,
          loss_fn=None, log_every: int = 0) -> TrainResult:
    """Adam over total_loss, one update per graph; deterministic per seed."""
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, lr=lr)
    model.size_samples = [g.n for g in dataset]
    model.edge_samples = [g.num_edges for g in dataset]
    trace = []
    for epoch in range(epochs):
        sums = {"loss": 0.0, "recon": 0.0, "kl": 0.0, "balance": 0.0}
        for g in dataset:
            parts: dict = {}
            if loss_fn is None:
                h = encode_hierarchy(g, model, mode="train", rng=rng)
                loss = total_loss(h, model, parts)
            else:
                loss = loss_fn(g, model, rng, parts)
            val = float(loss.data)
            if not np.isfinite(val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}: parts={parts}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss"] += val
            for key in ("recon", "kl", "balance"):
                sums[key] += parts.get(key, 0.0)
        trace.append({k: v / len(dataset) for k, v in sums.items()})
        trace[-1]["epoch"] = epoch
        if log_every and epoch % log_every == 0:
            print(f"epoch {epoch}: loss {trace[-1]['loss']:.4f}")
    return TrainResult(trace=trace)


# -- generation ---------------------------------------------------------------


def generate(model: Model, count: int, n: int = None, threshold: float = 0.5,
             seed: int = 0, mode: str = "threshold") -> list[Graph]:
    """Sample latents from the bottom-level prior and decode adjacencies.

    `n=None` draws node counts from the training-set size distribution.
    Corrective mode adds edges in descending probability until a target
    edge count drawn from the training distribution is met.
    """
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    if n is None and not model.size_samples:
        raise ValueError("untrained model: no size distribution to sample")
    graphs = []
    bottom_level = cfg.levels
    for _ in range(count):
        n_i = n if n is not None else int(rng.choice(model.size_samples))
        if cfg.bottom_decoder == "mlp" and n_i > cfg.max_nodes:
            raise ValueError("requested size exceeds decoder capacity")
        if cfg.prior_kind == "learnable":
            prior = model.priors[bottom_level]
            eps = rng.standard_normal((prior.m, cfg.d_z))
            z_full = sample(
                GaussianState(prior.mu.detach(), prior.L_fac.detach(),
                              diagonal=False), eps)
            Z = Tensor(z_full.data[:n_i])
        else:
            Z = Tensor(rng.standard_normal((n_i, cfg.d_z)))
        if cfg.bottom_decoder == "mlp":
            probs = decode_global(Z, model).data[:n_i, :n_i]
        else:
            probs = decode_local(Z).data
        probs = (probs + probs.T) / 2.0
        np.fill_diagonal(probs, 0.0)
        if mode == "threshold":
            A = (probs > threshold).astype(np.float64)
        elif mode == "corrective":
            target_edges = int(rng.choice(model.edge_samples)) \
                if model.edge_samples else 0
            iu, ju = np.triu_indices(n_i, 1)
            order = np.argsort(-probs[iu, ju], kind="stable")
            A = np.zeros((n_i, n_i))
            for idx in order[:target_edges]:
                A[iu[idx], ju[idx]] = 1.0
                A[ju[idx], iu[idx]] = 1.0
        else:
            raise ValueError(f"unknown generation mode {mode!r}")
        graphs.append(Graph(A))
    return graphs
