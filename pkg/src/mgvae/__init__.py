"""Multiresolution graph networks and hierarchical graph VAEs."""

from .cluster import (
    BalanceStats,
    ClusterAssignment,
    argmax_assign,
    balance_kl,
    cluster_logits,
    cluster_stats,
    gumbel_assign,
    kmeans_baseline,
    learn_balanced_clustering,
    spectral_baseline,
)
from .graph import (
    EdgeSplit,
    Graph,
    coarsen,
    induced_subgraph,
    load_graph,
    mask_edges,
    save_graph_json,
    synth_community,
)
from .metrics import GraphStats, auc_ap, edge_recon_metrics, graph_stats, mmd
from .model import (
    Hierarchy,
    Model,
    ModelConfig,
    decode_global,
    decode_local,
    elbo_loss,
    encode_hierarchy,
    generate,
    mgn_supervised_loss,
    total_loss,
    train,
)
from .probabilistic import (
    GaussianState,
    LearnablePrior,
    free_match,
    gaussian_kl,
    hungarian_match,
    matched_kl,
    sample,
    standard_prior,
)
from .tensor import (
    Tensor,
    contract,
    elementwise,
    grad_check,
    linear,
    tensor_product,
)

__version__ = "0.1.0"
