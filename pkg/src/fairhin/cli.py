"""Command-line interface: ``fairhin <command> ...``.

Files refer to nodes by name; commands that need dense ids take ``--graph``
pointing at a graph directory written by ``load`` or ``synth``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .datasets import DATA_ENV, SyntheticSpec, default_movielens_dir, generate_synthetic, load_movielens
from .metrics import PredictionRecord, diff_dp, diff_eo, mrr

logger = logging.getLogger("fairhin")


def _graph(path):
    return io.read_graph(path)


def cmd_load(args):
    path = Path(args.data) if args.data else default_movielens_dir()
    ds = load_movielens(path)
    io.write_graph(ds.graph, args.out, ds.labels, ds.item_texts)
    g = ds.graph
    print(f"users={len(ds.users)} items={len(g.nodes_of_type('item'))} careers={len(ds.careers)} "
          f"group0={g.group_sizes[0]} group1={g.group_sizes[1]}")


def cmd_synth(args):
    from .pipeline import parse_user_counts

    kw = {"beta": args.beta, "seed": args.seed}
    if args.users:
        kw["users"] = parse_user_counts(args.users)
    for name in ("n_items", "likes_per_user", "career_signal"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    ds = generate_synthetic(SyntheticSpec(**kw))
    io.write_graph(ds.graph, args.out, ds.labels, ds.item_texts)
    print(f"users={len(ds.users)} items={len(ds.graph.nodes_of_type('item'))} careers={len(ds.careers)}")


def cmd_sample_walks(args):
    from .walks import SamplerConfig, generate_walks, metapath_by_name

    g = _graph(args.graph)
    cfg = SamplerConfig(args.num_walks, args.walk_length, args.ratio, args.seed, args.mode,
                        args.literal_ratio)
    walks = generate_walks(g, metapath_by_name(args.metapath), cfg, workers=args.workers)
    io.write_walks(walks, args.out, g)
    print(f"{len(walks)} walks -> {args.out}")


def cmd_train_embed(args):
    from .skipgram import SkipGramConfig, train_skipgram

    cfg = SkipGramConfig(args.dim, args.negatives, args.window, args.alpha, args.min_alpha,
                         args.epochs, args.seed)
    if args.graph:
        g = _graph(args.graph)
        emb = train_skipgram(io.read_walks(args.walks, g), cfg, node_types=g.type_codes())
        io.write_embeddings(emb, args.out, g)
    else:
        # without a graph every token shares one type
        tokens = io.read_walk_tokens(args.walks)
        vocab = sorted({t for w in tokens for t in w})
        index = {t: i for i, t in enumerate(vocab)}
        emb = train_skipgram([[index[t] for t in w] for w in tokens], cfg)
        io.write_embedding_rows([vocab[v] for v in emb.ids], emb.vectors, args.out)
    losses = " ".join(f"{x:.4f}" for x in emb.meta["epoch_loss"])
    print(f"{len(emb)} vectors of dim {emb.dim}; epoch loss {losses}")


def cmd_debias(args):
    from .projection import debias_all
    from .skipgram import EmbeddingTable

    names, types, groups, _ = io.read_node_table(args.node_table)
    index = {n: i for i, n in enumerate(names)}
    rows, vectors = io.read_embedding_rows(args.embeddings)
    try:
        ids = np.array([index[n] for n in rows], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"embedding row {e.args[0]!r} is not in the node table")
    emb = EmbeddingTable(ids, vectors)
    fit = None
    if args.fit_users:
        fit = [index[line.strip()] for line in open(args.fit_users, encoding="utf-8") if line.strip()]
    out = debias_all(emb, groups, fit_users=fit)
    io.write_embedding_rows([names[v] for v in out.ids], out.vectors, args.out)


def _fold(args, g):
    if not args.splits:
        return None
    plans = io.read_splits(args.splits, g)
    for p in plans:
        if p.fold == args.fold:
            return p
    raise ValueError(f"fold {args.fold} not in {args.splits}")


def cmd_train_gnn(args):
    from .gnn import FairLossConfig, GnnConfig, GnnGraph, build_features, train_gnn

    g = _graph(args.graph)
    labels = io.read_labels(g, args.labels)
    if args.features:
        X = io.read_embeddings(args.features, g)
    else:
        texts = io.read_item_texts(g, Path(args.graph) / "items.tsv")
        X = build_features(g, texts)
    plan = _fold(args, g)
    train = plan.gnn_train() if plan else sorted(labels)
    valid = plan.valid if plan else ()
    lam = args.lam if args.fair != "none" else 0.0
    fair = FairLossConfig(args.fair, lambda_dp=lam if args.fair == "dp" else 0.0,
                          lambda_eo=lam if args.fair == "eo" else 0.0)
    cfg = GnnConfig(hidden=args.hidden, lr=args.lr, epochs=args.epochs, patience=args.patience,
                    optimizer=args.optimizer, seed=args.seed)
    view = GnnGraph.from_hin(g)
    careers = g.nodes_of_type("career").tolist()
    model = train_gnn(view, X, labels, dict(g.attr.groups), train, valid, fair, cfg, classes=careers)
    io.save_gnn(model, args.out, g)
    print(f"trained {model.meta['epochs_run']} epochs; best validation MRR "
          f"{model.meta['best_valid_mrr']:.4f}")


def cmd_train_mlp(args):
    from .predictor import MlpConfig, train_mlp

    g = _graph(args.graph)
    emb = io.read_embeddings(args.embeddings, g)
    labels = io.read_labels(g, args.labels)
    plan = _fold(args, g)
    train = plan.train if plan else sorted(labels)
    valid = plan.valid if plan else ()
    cfg = MlpConfig(hidden=args.hidden, lr=args.lr, epochs=args.epochs, patience=args.patience,
                    seed=args.seed)
    model = train_mlp(emb, [(u, labels[u]) for u in train], g.nodes_of_type("career").tolist(),
                      [(u, labels[u]) for u in valid], cfg)
    io.save_mlp(model, args.out, g)
    print(f"final training loss {model.meta['loss_history'][-1]:.4f}")


def cmd_predict(args):
    from .pipeline import rankings_from_probs

    g = _graph(args.graph)
    users = [g.id_of(line.strip()) for line in open(args.users, encoding="utf-8") if line.strip()]
    head, _ = io.load_model(args.model)
    table = io.read_embeddings(args.embeddings, g)
    if head["kind"] == "mlp":
        from .predictor import predict_proba
        model = io.load_mlp(args.model, g)
        P, classes = predict_proba(model, table, users), model.careers
    else:
        from .gnn import GnnGraph, gnn_forward
        model = io.load_gnn(args.model, g)
        view = GnnGraph.from_hin(g)
        P, classes = gnn_forward(model, view, view.feature_matrix(table), users), model.classes
    io.write_rankings(rankings_from_probs(P, users, classes), args.out, g)


def cmd_evaluate(args):
    names, _, groups, _ = io.read_node_table(args.groups)
    group_of = {names[i]: grp for i, grp in groups.items()}
    truth = {u: c for _, (u, c) in io.read_tsv(args.labels, 2)}
    ranked: dict[str, list] = {}
    for lineno, (user, rank, career, _p) in io.read_tsv(args.rankings, 4):
        if lineno == 1 and user == "user_id":
            continue
        ranked.setdefault(user, []).append((int(rank), career))
    recs = [PredictionRecord(u, group_of[u], truth[u], [c for _, c in sorted(r)])
            for u, r in sorted(ranked.items())]
    print(f"users={len(recs)} mrr={mrr(recs):.6f} diff_dp={diff_dp(recs):.6f} "
          f"diff_eo={diff_eo(recs):.6f}")


def cmd_sweep(args):
    from .pipeline import read_config, run_sweep

    sc = read_config(args.config)
    if args.workers:
        sc.workers = args.workers
    if args.out:
        sc.pipeline.out = Path(args.out)
    if args.seed is not None:
        sc.pipeline.seeds = (args.seed,)
    reports = run_sweep(sc)
    print(f"{len(reports)} reports -> {sc.pipeline.out / 'reports.csv'}")


def cmd_report(args):
    from .pipeline import write_report

    src = Path(args.reports)
    files = sorted(src.rglob("reports*.csv")) if src.is_dir() else [src]
    if not files:
        raise ValueError(f"no reports*.csv under {src}")
    reports = [r for f in files for r in io.read_reports(f)]
    tables = write_report(reports, args.out, args.baseline_method)
    for t in tables.values():
        print(t.to_text())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fairhin", description="Fair career ranking on heterogeneous user-item-career graphs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("load", help="convert raw MovieLens-1M files to a graph directory")
    s.add_argument("--data", help=f"directory with users.dat etc. (default ${DATA_ENV}/ml-1m)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_load)

    s = sub.add_parser("synth", help="write a synthetic graph with planted bias")
    s.add_argument("--users", help='per-career group counts, e.g. "36:14,32:18"')
    s.add_argument("--items", dest="n_items", type=int)
    s.add_argument("--beta", type=float, default=0.8)
    s.add_argument("--likes", dest="likes_per_user", type=int)
    s.add_argument("--career-signal", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("sample-walks", help="meta-path random walks")
    s.add_argument("--graph", required=True)
    s.add_argument("--metapath", choices=("cuiuc", "uiu"), required=True)
    s.add_argument("--mode", choices=("standard", "fair"), default="standard")
    s.add_argument("--num-walks", type=int, default=10)
    s.add_argument("--walk-length", type=int, default=10)
    s.add_argument("--ratio", type=float, default=1.0)
    s.add_argument("--literal-ratio", action="store_true",
                   help="apply the ratio to both groups (cancels out; for comparison only)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample_walks)

    s = sub.add_parser("train-embed", help="skip-gram with negative sampling on a walk file")
    s.add_argument("--walks", required=True)
    s.add_argument("--graph", help="graph directory; enables type-matched negatives")
    s.add_argument("--dim", type=int, default=128)
    s.add_argument("--negatives", type=int, default=5)
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--alpha", type=float, default=0.025)
    s.add_argument("--min-alpha", type=float, default=1e-4)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_embed)

    s = sub.add_parser("debias", help="project user embeddings off the bias direction")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--node-table", required=True)
    s.add_argument("--fit-users", help="file of user names used to estimate the direction")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_debias)

    s = sub.add_parser("train-gnn", help="train the (fairness-regularised) GNN")
    s.add_argument("--graph", required=True)
    s.add_argument("--features", help="feature file (embedding text format); default: hash items.tsv")
    s.add_argument("--labels", required=True)
    s.add_argument("--splits")
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--fair", choices=("none", "dp", "eo"), default="none")
    s.add_argument("--lambda", dest="lam", type=float, default=0.0)
    s.add_argument("--hidden", type=int, default=128)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--patience", type=int, default=30)
    s.add_argument("--optimizer", choices=("gd", "adam"), default="gd")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_gnn)

    s = sub.add_parser("train-mlp", help="train the career ranker on embeddings")
    s.add_argument("--graph", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--splits")
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--hidden", type=int, default=128)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--patience", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_mlp)

    s = sub.add_parser("predict", help="rank careers for a list of users")
    s.add_argument("--graph", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--embeddings", required=True, help="embeddings (MLP) or features (GNN)")
    s.add_argument("--users", required=True, help="file with one user name per line")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="MRR and fairness gaps of a rankings file")
    s.add_argument("--rankings", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--groups", required=True, help="node table (nodes.tsv)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run every (method, params, seed) cell of a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int, help="run only this seed instead of the configured ones")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="Pareto and threshold tables from report CSVs")
    s.add_argument("--reports", required=True, help="a reports CSV or a directory of them")
    s.add_argument("--baseline-method", default="gnn")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, KeyError, FloatingPointError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
