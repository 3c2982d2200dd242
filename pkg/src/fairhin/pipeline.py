"""End-to-end experiment runner, sweep driver and report tables.

Every stage writes its output in the documented file formats and the next
stage reads it back, so a run resumed from persisted artifacts is identical
to an uninterrupted one.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import io
from .datasets import (HinDataset, SyntheticSpec, default_movielens_dir, generate_synthetic,
                       load_movielens)
from .gnn import FairLossConfig, GnnConfig, GnnGraph, build_features, gnn_forward, train_gnn
from .metrics import PredictionRecord, diff_dp, diff_eo, mrr
from .predictor import MlpConfig, predict_proba, train_mlp
from .projection import debias_all
from .selection import (EvalReport, aggregate, format_params, gnn_baseline_for_fairness,
                        pareto_frontier, threshold_select)
from .skipgram import SkipGramConfig, train_skipgram
from .splits import SplitPlan, balance_data, nested_cv_split
from .walks import SamplerConfig, builtin_metapaths, generate_corpus

logger = logging.getLogger(__name__)

M2V_METHODS = ("balance-data", "m2v", "m2v+fair", "m2v+proj", "m2v+fair+proj")
GNN_METHODS = ("gnn", "gnn-dp", "gnn-eo")
METHODS = M2V_METHODS + GNN_METHODS


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it and earlier artifacts stay on disk."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class PipelineConfig:
    out: Path = Path("runs")
    data: dict = field(default_factory=lambda: {"source": "synthetic"})
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    sampler: SamplerConfig = SamplerConfig()
    skipgram: SkipGramConfig = SkipGramConfig()
    mlp: MlpConfig = MlpConfig()
    gnn: GnnConfig = GnnConfig()
    feature_dim: int = 50


# -- data ---------------------------------------------------------------------

def synthetic_spec_from(data: dict) -> SyntheticSpec:
    kw = {}
    for f in fields(SyntheticSpec):
        if f.name not in data:
            continue
        raw = data[f.name]
        if f.name == "users":
            kw["users"] = raw if isinstance(raw, tuple) else parse_user_counts(raw)
        elif f.name in ("beta", "career_signal"):
            kw[f.name] = float(raw)
        else:
            kw[f.name] = int(raw)
    return SyntheticSpec(**kw)


def parse_user_counts(text: str) -> tuple[tuple[int, int], ...]:
    """``"36:14, 32:18"`` -> ``((36, 14), (32, 18))``."""
    out = []
    for part in text.split(","):
        a, _, b = part.strip().partition(":")
        out.append((int(a), int(b)))
    return tuple(out)


def load_dataset(data: dict) -> HinDataset:
    source = data.get("source", "synthetic")
    if source == "synthetic":
        return generate_synthetic(synthetic_spec_from(data))
    if source == "movielens":
        path = data.get("path")
        return load_movielens(path if path is not None else default_movielens_dir())
    if source == "dir":
        return io.read_dataset(data["path"])
    raise ValueError(f"unknown data source {source!r}")


# -- small helpers --------------------------------------------------------------

def _atomic(path: Path, write: Callable[[Path], None]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    os.close(fd)
    try:
        write(Path(tmp))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(name, e) from e


def _short_hash(obj) -> str:
    return hashlib.blake2b(repr(obj).encode(), digest_size=4).hexdigest()


def evaluate_rankings(rankings, labels, groups) -> dict[str, float]:
    recs = [PredictionRecord(u, groups[u], labels[u], [c for c, _ in rankings[u]])
            for u in sorted(rankings)]
    return {"mrr": mrr(recs), "diff_dp": diff_dp(recs), "diff_eo": diff_eo(recs)}


def rankings_from_probs(P: np.ndarray, users, classes) -> dict:
    out = {}
    for u, row in zip(users, P):
        order = np.argsort(-row, kind="stable")
        out[int(u)] = [(classes[i], float(row[i])) for i in order]
    return out


# -- runner -----------------------------------------------------------------------

class Runner:
    """Runs methods for one dataset, caching every intermediate under ``cfg.out``."""

    def __init__(self, cfg: PipelineConfig, dataset: HinDataset | None = None):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.ds = dataset if dataset is not None else _stage("load", load_dataset, cfg.data)
        self.g = self.ds.graph
        self.groups = self.ds.groups
        self.careers = self.ds.careers
        gdir = self.out / "data"
        if not (gdir / "edges.tsv").exists():
            _stage("load", io.write_graph, self.g, gdir, self.ds.labels, self.ds.item_texts)

    # splits
    def splits(self, seed: int) -> list[SplitPlan]:
        path = self.out / f"seed{seed}" / "splits.tsv"
        if not path.exists():
            plans = _stage("split", nested_cv_split, self.ds.users, self.ds.labels, seed)
            _atomic(path, lambda p: io.write_splits(plans, p, self.g))
        return io.read_splits(path, self.g)

    # sampling-based branch
    def embedding_graph(self, plans, seed: int, balanced: bool):
        embed = set(plans[0].embed)
        # career links are visible only for embedding-training users
        eg = self.g.drop_edges(lambda u, v, rel: rel.name != "choose" or u in embed or v in embed)
        if balanced:
            eg, removed = balance_data(eg, sorted(embed), self.ds.labels, seed)
            logger.info("seed %d: balance-data removed %d users", seed, len(removed))
        return eg

    def embeddings(self, seed: int, plans, mode: str, ratio: float, balanced: bool,
                   sampler: SamplerConfig, sg: SkipGramConfig):
        key = (mode, ratio if mode == "fair" else 1.0, balanced, sampler.num_walks,
               sampler.walk_length, sampler.literal_ratio, asdict(sg))
        tag = "balanced" if balanced else mode
        d = self.out / f"seed{seed}" / "embed" / f"{tag}-r{key[1]:g}-{_short_hash(key)}"
        walks_path, emb_path = d / "walks.txt", d / "embeddings.txt"
        if not emb_path.exists():
            if not walks_path.exists():
                eg = self.embedding_graph(plans, seed, balanced)
                scfg = replace(sampler, mode=mode, ratio=key[1], seed=seed)
                corpus = _stage("sample", generate_corpus, eg, builtin_metapaths(), scfg)
                _atomic(walks_path, lambda p: io.write_walks(corpus, p, self.g))
            corpus = io.read_walks(walks_path, self.g)
            emb = _stage("embed", train_skipgram, corpus, replace(sg, seed=seed),
                         node_types=self.g.type_codes())
            _atomic(emb_path, lambda p: io.write_embeddings(emb, p, self.g))
        return io.read_embeddings(emb_path, self.g), d

    def debiased(self, emb, d: Path, plans):
        path = d / "debiased.txt"
        if not path.exists():
            out = _stage("debias", debias_all, emb, self.groups, fit_users=plans[0].embed)
            _atomic(path, lambda p: io.write_embeddings(out, p, self.g))
        return io.read_embeddings(path, self.g)

    def run_m2v(self, method: str, seed: int, ratio: float = 1.0, num_walks: int | None = None,
                walk_length: int | None = None) -> list[EvalReport]:
        cfg = self.cfg
        sampler = replace(cfg.sampler, num_walks=num_walks or cfg.sampler.num_walks,
                          walk_length=walk_length or cfg.sampler.walk_length)
        fair = method in ("m2v+fair", "m2v+fair+proj")
        params = {"num_walks": sampler.num_walks, "walk_length": sampler.walk_length,
                  "epochs": cfg.skipgram.epochs, "alpha": cfg.skipgram.alpha}
        if fair:
            params["r"] = ratio
        plans = self.splits(seed)
        emb, d = self.embeddings(seed, plans, "fair" if fair else "standard", ratio,
                                 method == "balance-data", sampler, cfg.skipgram)
        if method.endswith("+proj"):
            emb = self.debiased(emb, d, plans)
        ptag = format_params(params)
        reports = []
        for p in plans:
            fdir = self.out / f"seed{seed}" / method / _safe(ptag) / f"fold{p.fold}"
            rank_path = fdir / "rankings.tsv"
            if not rank_path.exists():
                pairs = [(u, self.ds.labels[u]) for u in p.train]
                valid = [(u, self.ds.labels[u]) for u in p.valid]
                model = _stage("train-mlp", train_mlp, emb, pairs, self.careers, valid,
                               replace(cfg.mlp, seed=seed))
                _atomic(fdir / "model.bin", lambda q: io.save_mlp(model, q, self.g))
                model = io.load_mlp(fdir / "model.bin", self.g)
                P = _stage("predict", predict_proba, model, emb, p.test)
                ranks = rankings_from_probs(P, p.test, model.careers)
                _atomic(rank_path, lambda q: io.write_rankings(ranks, q, self.g))
            reports.append(self._report(method, ptag, seed, p.fold, rank_path))
        return reports

    # feature-based branch
    def features(self):
        path = self.out / "features" / f"hashed-{self.cfg.feature_dim}.txt"
        if not path.exists():
            X = _stage("features", build_features, self.g, self.ds.item_texts, self.cfg.feature_dim)
            _atomic(path, lambda p: io.write_embeddings(X, p, self.g))
        return io.read_embeddings(path, self.g)

    def run_gnn(self, method: str, seed: int, lam: float = 0.0) -> list[EvalReport]:
        mode = {"gnn": "none", "gnn-dp": "dp", "gnn-eo": "eo"}[method]
        if mode == "none" and lam:
            raise ValueError("plain gnn takes no fairness weight")
        fair = FairLossConfig(mode, lambda_dp=lam if mode == "dp" else 0.0,
                              lambda_eo=lam if mode == "eo" else 0.0)
        params = {"loss": "mean"}
        if mode != "none":
            params[f"lambda_{mode}"] = lam
        ptag = format_params(params)
        plans = self.splits(seed)
        view = GnnGraph.from_hin(self.g)
        X = view.feature_matrix(self.features())
        reports = []
        for p in plans:
            fdir = self.out / f"seed{seed}" / method / _safe(ptag) / f"fold{p.fold}"
            rank_path = fdir / "rankings.tsv"
            if not rank_path.exists():
                model = _stage("train-gnn", train_gnn, view, X, self.ds.labels, self.groups,
                               p.gnn_train(), p.valid, fair, replace(self.cfg.gnn, seed=seed),
                               classes=self.careers)
                _atomic(fdir / "model.bin", lambda q: io.save_gnn(model, q, self.g))
                model = io.load_gnn(fdir / "model.bin", self.g)
                P = _stage("predict", gnn_forward, model, view, X, p.test)
                ranks = rankings_from_probs(P, p.test, model.classes)
                _atomic(rank_path, lambda q: io.write_rankings(ranks, q, self.g))
            reports.append(self._report(method, ptag, seed, p.fold, rank_path))
        return reports

    def _report(self, method, ptag, seed, fold, rank_path) -> EvalReport:
        ranks = io.read_rankings(rank_path, self.g)
        m = _stage("evaluate", evaluate_rankings, ranks, self.ds.labels, self.groups)
        return EvalReport(method, ptag, seed, fold, m["mrr"], m["diff_dp"], m["diff_eo"])

    def run(self, method: str, params: dict | None = None,
            seeds: Iterable[int] | None = None) -> list[EvalReport]:
        params = dict(params or {})
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        seeds = self.cfg.seeds if seeds is None else tuple(seeds)
        out = []
        for seed in seeds:
            if method in M2V_METHODS:
                out += self.run_m2v(method, seed, float(params.get("r", 1.0)),
                                    num_walks=int(params.get("num_walks", 0)) or None,
                                    walk_length=int(params.get("walk_length", 0)) or None)
            else:
                key = {"gnn": "lambda", "gnn-dp": "lambda_dp", "gnn-eo": "lambda_eo"}[method]
                out += self.run_gnn(method, seed, float(params.get(key, 0.0)))
        return out


def _safe(tag: str) -> str:
    return tag.replace(";", "_").replace("=", "-") or "default"


def run_pipeline(config: PipelineConfig, method: str, params: dict | None = None,
                 dataset: HinDataset | None = None) -> list[EvalReport]:
    """One EvalReport per (seed, fold) for ``method`` under ``params``."""
    return Runner(config, dataset).run(method, params)


# -- config files --------------------------------------------------------------------

def _grid(text: str) -> list[float]:
    """Comma list; ``a:b:s`` expands to the inclusive range a, a+s, ..., b."""
    vals = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            a, b, s = (float(x) for x in part.split(":"))
            n = int(round((b - a) / s))
            vals += [a + i * s for i in range(n + 1)]
        else:
            vals.append(float(part))
    return [int(v) if float(v).is_integer() else v for v in vals]


def _section(cp, name: str, cls, base):
    if not cp.has_section(name):
        return base
    types = {f.name: f.type for f in fields(cls)}
    kw = {}
    for key, raw in cp.items(name):
        if key not in types:
            raise ValueError(f"[{name}] unknown key {key!r}")
        cur = getattr(base, key)
        kw[key] = raw.lower() in ("1", "true", "yes") if isinstance(cur, bool) else type(cur)(raw)
    return replace(base, **kw)


@dataclass
class SweepConfig:
    pipeline: PipelineConfig
    methods: tuple[str, ...]
    grids: dict[str, list]
    workers: int = 1


def read_config(path) -> SweepConfig:
    """Parse an INI-style sweep file (see the README for the keys)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    data = dict(cp.items("data")) if cp.has_section("data") else {"source": "synthetic"}
    run = dict(cp.items("run")) if cp.has_section("run") else {}
    base = Path(path).parent
    out = Path(run.get("out", "runs"))
    pcfg = PipelineConfig(
        out=out if out.is_absolute() else base / out,
        data=data,
        seeds=tuple(int(s) for s in _grid(run.get("seeds", "0,1,2,3,4"))),
        sampler=_section(cp, "sampler", SamplerConfig, SamplerConfig()),
        skipgram=_section(cp, "skipgram", SkipGramConfig, SkipGramConfig()),
        mlp=_section(cp, "mlp", MlpConfig, MlpConfig()),
        gnn=_section(cp, "gnn", GnnConfig, GnnConfig()),
        feature_dim=int(run.get("feature_dim", 50)),
    )
    if data.get("source") == "dir" and not Path(data["path"]).is_absolute():
        data["path"] = str(base / data["path"])
    sweep = dict(cp.items("sweep")) if cp.has_section("sweep") else {}
    methods = tuple(m.strip() for m in sweep.pop("methods", ",".join(METHODS)).split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    workers = int(sweep.pop("workers", 1))
    grids = {k: _grid(v) for k, v in sweep.items()}
    unknown = set(grids) - {"r", "lambda_dp", "lambda_eo", "num_walks", "walk_length"}
    if unknown:
        raise ValueError(f"[sweep] unknown grid(s): {sorted(unknown)}")
    return SweepConfig(pcfg, methods, grids, workers)


def sweep_cells(sc: SweepConfig) -> list[tuple[str, dict]]:
    """Every (method, params) combination the sweep will run."""
    cells = []
    sampler_keys = [k for k in ("num_walks", "walk_length") if k in sc.grids]
    for method in sc.methods:
        keys = list(sampler_keys) if method in M2V_METHODS else []
        if method in ("m2v+fair", "m2v+fair+proj"):
            keys.append("r")
        elif method == "gnn-dp":
            keys.append("lambda_dp")
        elif method == "gnn-eo":
            keys.append("lambda_eo")
        combos = [{}]
        for k in keys:
            combos = [dict(c, **{k: v}) for c in combos for v in (sc.grids[k] if k in sc.grids else [_default(k)])]
        cells += [(method, c) for c in combos]
    return cells


def _default(key):
    return {"r": 1, "lambda_dp": 0, "lambda_eo": 0}[key]


def _run_cell(args):
    pcfg, method, params = args
    return Runner(pcfg).run(method, params)


def run_sweep(sc: SweepConfig, reports_path=None) -> list[EvalReport]:
    """Run all sweep cells and write them to one reports CSV."""
    cells = sweep_cells(sc)
    runner = Runner(sc.pipeline)  # materializes the dataset directory once
    reports: list[EvalReport] = []
    if sc.workers > 1:
        with ProcessPoolExecutor(sc.workers) as pool:
            for rs in pool.map(_run_cell, [(sc.pipeline, m, p) for m, p in cells]):
                reports += rs
    else:
        for method, params in cells:
            logger.info("running %s %s", method, params)
            reports += runner.run(method, params)
    path = Path(reports_path or sc.pipeline.out / "reports.csv")
    io.write_reports(reports, path)
    return reports


# -- report tables ---------------------------------------------------------------------

def pareto_table(reports: Sequence[EvalReport], metric: str) -> dict:
    agg = aggregate(reports)
    keys = list(agg)
    pts = [(agg[k]["mrr"], agg[k][metric]) for k in keys]
    front = set(pareto_frontier(pts))
    rows = [{"method": m, "params": p, "mrr": agg[(m, p)]["mrr"], metric: agg[(m, p)][metric],
             "runs": agg[(m, p)]["runs"], "frontier": (agg[(m, p)]["mrr"], agg[(m, p)][metric]) in front}
            for m, p in keys]
    return {"metric": metric, "points": rows}


def per_seed_points(reports: Sequence[EvalReport]) -> list[dict]:
    """Fold-averaged points per (method, params, seed)."""
    cells: dict[tuple, list[EvalReport]] = {}
    for r in reports:
        cells.setdefault((r.method, r.params, r.seed), []).append(r)
    out = []
    for (m, p, s), rs in sorted(cells.items()):
        out.append({"method": m, "params": p, "seed": s,
                    **{k: float(np.mean([getattr(r, k) for r in rs]))
                       for k in ("mrr", "diff_dp", "diff_eo")}})
    return out


def _pareto_text(table: dict) -> str:
    metric = table["metric"]
    lines = [f"# Pareto points ({metric}); * marks the frontier",
             f"{'':1} {'method':<14} {'mrr':>8} {metric:>8}  params"]
    for row in sorted(table["points"], key=lambda r: (-r["mrr"], r[metric])):
        mark = "*" if row["frontier"] else " "
        lines.append(f"{mark} {row['method']:<14} {row['mrr']:8.4f} {row[metric]:8.4f}  {row['params']}")
    return "\n".join(lines) + "\n"


def write_report(reports: Sequence[EvalReport], out_dir, baseline_method: str = "gnn") -> dict:
    """Pareto and LF/MF/HF threshold tables for both fairness metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for metric in ("diff_dp", "diff_eo"):
        short = metric.replace("diff_", "")
        table = pareto_table(reports, metric)
        (out / f"pareto_{short}.json").write_text(json.dumps(table, indent=2), encoding="utf-8")
        (out / f"pareto_{short}.txt").write_text(_pareto_text(table), encoding="utf-8")
        try:
            base = gnn_baseline_for_fairness(reports, metric, baseline_method)
        except ValueError:
            logger.warning("no %s runs; threshold tables skipped", baseline_method)
            continue
        thr = threshold_select(reports, base, metric)
        (out / f"thresholds_{short}.json").write_text(thr.to_json(), encoding="utf-8")
        (out / f"thresholds_{short}.txt").write_text(thr.to_text(), encoding="utf-8")
        written[metric] = thr
    (out / "pareto_points_per_seed.json").write_text(
        json.dumps(per_seed_points(reports), indent=2), encoding="utf-8")
    return written
