"""Command-line drivers: train | generate | evaluate | linkpred | cluster.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 I/O error.
Flags override entries of an optional key=value --config file. All
randomness is derived from the explicit --seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import cluster as clu
from . import metrics
from .checkpoint import CheckpointError
from .graph import (
    Graph,
    GraphFormatError,
    load_graph,
    mask_edges,
    save_graph_json,
    synth_community,
)
from .model import (
    Model,
    ModelConfig,
    decode_local,
    encode_hierarchy,
    generate,
    train,
)
from .tensor import NumericError

EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _out_dirs(out: Path) -> dict[str, Path]:
    dirs = {name: out / name for name in ("checkpoints", "graphs", "reports")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _load_dataset(args) -> list[Graph]:
    if args.dataset == "community":
        return synth_community(args.n_min, args.n_max, args.graphs,
                               p_in=args.p_in, p_out=args.p_out,
                               seed=args.seed)
    path = Path(args.dataset)
    if path.is_dir():
        files = sorted(path.glob("*.json")) + sorted(path.glob("*.edges"))
        if not files:
            raise FileNotFoundError(f"no graph files in {path}")
        return [load_graph(f) for f in files]
    return [load_graph(path)]


def _config_from_args(args) -> ModelConfig:
    clusters = tuple(int(k) for k in args.clusters.split(","))
    return ModelConfig(
        levels=args.levels,
        clusters=clusters,
        hidden=args.hidden,
        depth=args.depth,
        d_z=args.d_z,
        prior_kind=args.prior,
        bottom_decoder=args.decoder,
        decoder_hidden=args.decoder_hidden,
        max_nodes=args.max_nodes,
    )


def cmd_train(args) -> int:
    dirs = _out_dirs(Path(args.out))
    dataset = _load_dataset(args)
    model = Model(_config_from_args(args), seed=args.seed)
    result = train(dataset, model, lr=args.lr, epochs=args.epochs,
                   seed=args.seed)
    ckpt = dirs["checkpoints"] / "model.ckpt"
    model.save(ckpt)
    with open(dirs["reports"] / "trace.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss", "recon", "kl", "balance"])
        for row in result.trace:
            writer.writerow([row["epoch"], row["loss"], row["recon"],
                             row["kl"], row["balance"]])
    if result.trace:
        print(f"final loss {result.trace[-1]['loss']:.6f}")
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_generate(args) -> int:
    dirs = _out_dirs(Path(args.out))
    model = Model.load(args.checkpoint)
    graphs = generate(model, args.count, n=args.nodes,
                      threshold=args.threshold, seed=args.seed,
                      mode=args.mode)
    for i, g in enumerate(graphs):
        save_graph_json(dirs["graphs"] / f"g{i:05d}.json", g)
    sizes = [g.n for g in graphs]
    edges = [g.num_edges for g in graphs]
    summary = {
        "count": len(graphs),
        "mean_nodes": float(np.mean(sizes)) if graphs else 0.0,
        "mean_edges": float(np.mean(edges)) if graphs else 0.0,
    }
    (dirs["reports"] / "generate.json").write_text(json.dumps(summary))
    print(json.dumps(summary))
    return 0


def _stats_for_dir(path: Path) -> list[metrics.GraphStats]:
    files = sorted(Path(path).glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no graphs in {path}")
    return [metrics.graph_stats(load_graph(f)) for f in files]


def cmd_evaluate(args) -> int:
    dirs = _out_dirs(Path(args.out))
    gen_stats = _stats_for_dir(Path(args.generated))
    test_stats = _stats_for_dir(Path(args.test))
    report = {}
    lines = ["stat,mmd"]
    for which in ("degree", "cluster", "orbit"):
        value = metrics.mmd(gen_stats, test_stats, which, sigma=args.sigma)
        report[which] = value
        lines.append(f"{which},{value}")
    (dirs["reports"] / "mmd.csv").write_text("\n".join(lines) + "\n")
    (dirs["reports"] / "mmd.json").write_text(json.dumps(report))
    print(json.dumps(report))
    return 0


def linkpred_single(g: Graph, seed: int, epochs: int = 150,
                    lr: float = 1e-2, d_z: int = 8) -> tuple[float, float]:
    """Mask edges, train a 2-level model with the global dot decoder on the
    train graph, score held-out pairs by latent dot products.

    Featureless graphs get one-hot node identities as encoder input; the
    degree-bucket default is constant on dense graphs, which leaves every
    node with the same latent and every pair with the same score."""
    split = mask_edges(g, seed=seed)
    tg = split.train_graph
    if tg.node_features is None:
        tg = Graph(tg.adjacency, node_features=np.eye(tg.n))
    cfg = ModelConfig(levels=2, clusters=(1, 2), hidden=16, depth=2, d_z=d_z,
                      bottom_decoder="dot",
                      feature_dim=tg.features_or_default().shape[1])
    model = Model(cfg, seed=seed)
    train([tg], model, lr=lr, epochs=epochs, seed=seed)
    h = encode_hierarchy(tg, model, mode="eval")
    probs = decode_local(h.bottom.Z).data
    pairs = split.test_pos + split.test_neg
    labels = [1] * len(split.test_pos) + [0] * len(split.test_neg)
    scores = [probs[u, v] for u, v in pairs]
    return metrics.auc_ap(scores, labels)


def cmd_linkpred(args) -> int:
    dirs = _out_dirs(Path(args.out))
    if args.graph:
        g = load_graph(args.graph)
    else:
        g = synth_community(args.n_nodes, args.n_nodes, 1, p_in=args.p_in,
                            p_out=args.p_out, seed=args.seed)[0]
    aucs, aps = [], []
    for s in range(args.seeds):
        auc, ap = linkpred_single(g, seed=args.seed + s, epochs=args.epochs,
                                  lr=args.lr)
        aucs.append(auc)
        aps.append(ap)
    report = {
        "auc_mean": float(np.mean(aucs)), "auc_std": float(np.std(aucs)),
        "ap_mean": float(np.mean(aps)), "ap_std": float(np.std(aps)),
        "seeds": args.seeds,
    }
    (dirs["reports"] / "linkpred.json").write_text(json.dumps(report))
    print(json.dumps(report))
    return 0


def cmd_cluster(args) -> int:
    dirs = _out_dirs(Path(args.out))
    g = load_graph(args.graph)
    if args.K > g.n:
        raise argparse.ArgumentTypeError("K exceeds node count")
    rows = []
    learned, _ = clu.learn_balanced_clustering(g, args.K, epochs=args.epochs,
                                               lr=args.lr, seed=args.seed)
    rows.append(("learned", clu.cluster_stats(learned)))
    if g.n > 10:
        rows.append(("spectral",
                     clu.cluster_stats(clu.spectral_baseline(g, args.K,
                                                             seed=args.seed))))
    rows.append(("kmeans",
                 clu.cluster_stats(clu.kmeans_baseline(
                     g.features_or_default(), args.K, seed=args.seed))))
    lines = ["method,K,min,max,std,kl"]
    for name, stats in rows:
        lines.append(f"{name},{args.K},{stats.min},{stats.max},"
                     f"{stats.std:.6f},{stats.kl:.6f}")
    text = "\n".join(lines) + "\n"
    (dirs["reports"] / "cluster.csv").write_text(text)
    print(text, end="")
    return 0


# -- argument plumbing --------------------------------------------------------


def _apply_config_file(argv: list[str]) -> list[str]:
    """Prepend key=value pairs from --config as defaults; explicit flags win
    because they come later on the command line."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = Path(argv[i + 1])
    extra = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        extra.extend([f"--{key.strip()}", value.strip()])
    head, tail = argv[:1], argv[1:]
    return head + extra + tail


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgvae")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out")
        sp.add_argument("--config", default=None)

    tr = sub.add_parser("train")
    common(tr)
    tr.add_argument("--dataset", required=True,
                    help="'community' or a graph file/directory")
    tr.add_argument("--graphs", type=int, default=100)
    tr.add_argument("--n-min", type=int, default=12)
    tr.add_argument("--n-max", type=int, default=20)
    tr.add_argument("--p-in", type=float, default=0.7)
    tr.add_argument("--p-out", type=float, default=0.05)
    tr.add_argument("--levels", type=int, default=2)
    tr.add_argument("--clusters", default="1,2")
    tr.add_argument("--hidden", type=int, default=16)
    tr.add_argument("--depth", type=int, default=2)
    tr.add_argument("--d-z", dest="d_z", type=int, default=8)
    tr.add_argument("--prior", choices=["standard", "learnable"],
                    default="standard")
    tr.add_argument("--decoder", choices=["local", "dot", "mlp"],
                    default="mlp")
    tr.add_argument("--decoder-hidden", type=int, default=64)
    tr.add_argument("--max-nodes", type=int, default=20)
    tr.add_argument("--epochs", type=int, default=200)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.set_defaults(func=cmd_train)

    ge = sub.add_parser("generate")
    common(ge)
    ge.add_argument("--checkpoint", required=True)
    ge.add_argument("--count", type=int, default=64)
    ge.add_argument("--nodes", type=int, default=None)
    ge.add_argument("--threshold", type=float, default=0.5)
    ge.add_argument("--mode", choices=["threshold", "corrective"],
                    default="threshold")
    ge.set_defaults(func=cmd_generate)

    ev = sub.add_parser("evaluate")
    common(ev)
    ev.add_argument("--generated", required=True)
    ev.add_argument("--test", required=True)
    ev.add_argument("--sigma", type=float, default=1.0)
    ev.set_defaults(func=cmd_evaluate)

    lp = sub.add_parser("linkpred")
    common(lp)
    lp.add_argument("--graph", default=None)
    lp.add_argument("--n-nodes", type=int, default=60)
    lp.add_argument("--p-in", type=float, default=0.9)
    lp.add_argument("--p-out", type=float, default=0.02)
    lp.add_argument("--seeds", type=int, default=5)
    lp.add_argument("--epochs", type=int, default=150)
    lp.add_argument("--lr", type=float, default=1e-2)
    lp.set_defaults(func=cmd_linkpred)

    cl = sub.add_parser("cluster")
    common(cl)
    cl.add_argument("--graph", required=True)
    cl.add_argument("--K", type=int, default=2)
    cl.add_argument("--epochs", type=int, default=300)
    cl.add_argument("--lr", type=float, default=1e-3)
    cl.set_defaults(func=cmd_cluster)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (NumericError, np.linalg.LinAlgError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError, GraphFormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, argparse.ArgumentTypeError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
