"""On-disk formats for graphs, walks, embeddings, models, rankings and reports.

Text files are UTF-8 with LF line endings. Nodes are written by their
external names so files stay readable and independent of dense ids.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import GraphError, HinGraph, ProtectedAttribute, Relation, build_graph
from .selection import EvalReport
from .skipgram import EmbeddingTable
from .splits import SplitPlan

MODEL_MAGIC = b"FHINMDL\0"
MODEL_VERSION = 1
REPORT_FIELDS = ("method", "params", "seed", "split", "mrr", "diff_dp", "diff_eo")


class FormatError(ValueError):
    pass


def _open_w(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


def read_tsv(path, n_fields: int | None = None):
    """Yield ``(line number, fields)``, skipping blank and ``#`` lines."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if n_fields is not None and len(parts) != n_fields:
                raise FormatError(f"{path}:{lineno}: expected {n_fields} tab-separated fields")
            yield lineno, parts


# -- graph directory ----------------------------------------------------------

def write_graph(g: HinGraph, directory, labels: Mapping[int, int] | None = None,
                item_texts: Mapping[int, Sequence[str]] | None = None) -> Path:
    """Write ``nodes.tsv`` and ``edges.tsv`` plus optional labels and item texts."""
    d = Path(directory)
    with _open_w(d / "nodes.tsv") as f:
        f.write(f"# protected\t{g.attr.name}\t{g.attr.node_type}\n")
        for v in range(g.num_nodes):
            grp = g.group_of(v)
            f.write(f"{g.name_of(v)}\t{g.type_of(v)}\t{'-' if grp is None else grp}\n")
    with _open_w(d / "edges.tsv") as f:
        for u, v, rel in g.edges():
            f.write(f"{g.name_of(u)}\t{rel.name}\t{g.name_of(v)}\n")
    if labels is not None:
        write_labels(g, labels, d / "labels.tsv")
    if item_texts is not None:
        with _open_w(d / "items.tsv") as f:
            for v in sorted(item_texts):
                f.write(f"{g.name_of(v)}\t{' '.join(item_texts[v])}\n")
    return d


def read_node_table(path) -> tuple[list[str], list[str], dict[int, int], tuple[str, str]]:
    """Names, types and group labels (by row index) from a ``nodes.tsv`` file."""
    attr = ("group", "user")
    with open(path, encoding="utf-8") as f:
        first = f.readline().rstrip("\n").split("\t")
    if first[0] == "# protected" and len(first) == 3:
        attr = (first[1], first[2])
    names, types, groups = [], [], {}
    for lineno, (name, typ, grp) in read_tsv(path, 3):
        if grp != "-":
            if grp not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: group must be 0, 1 or '-'")
            groups[len(names)] = int(grp)
        names.append(name)
        types.append(typ)
    if len(set(names)) != len(names):
        raise FormatError(f"{path}: duplicate node name")
    return names, types, groups, attr


def read_graph(directory) -> HinGraph:
    """Inverse of :func:`write_graph`; dense ids follow the node-table order."""
    d = Path(directory)
    names, types, groups, (attr_name, protected) = read_node_table(d / "nodes.tsv")
    ids = {n: i for i, n in enumerate(names)}
    edges, rels = [], {}
    for lineno, (src, rel, dst) in read_tsv(d / "edges.tsv", 3):
        try:
            u, v = ids[src], ids[dst]
        except KeyError as e:
            raise FormatError(f"edges.tsv:{lineno}: unknown node {e.args[0]!r}") from None
        r = rels.setdefault(rel, Relation(rel, types[u], types[v]))
        edges.append((u, v, r))
    nodes = list(enumerate(types))
    return build_graph(nodes, edges, ProtectedAttribute(attr_name, protected, groups), names=names)


def write_labels(g: HinGraph, labels: Mapping[int, int], path) -> None:
    with _open_w(path) as f:
        for u in sorted(labels):
            f.write(f"{g.name_of(u)}\t{g.name_of(labels[u])}\n")


def read_labels(g: HinGraph, path) -> dict[int, int]:
    out = {}
    for lineno, (user, career) in read_tsv(path, 2):
        try:
            out[g.id_of(user)] = g.id_of(career)
        except GraphError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from None
    return out


def read_item_texts(g: HinGraph, path) -> dict[int, list[str]]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            name, _, text = line.rstrip("\n").partition("\t")
            if name:
                out[g.id_of(name)] = text.split()
    return out


def read_dataset(directory):
    from .datasets import HinDataset, labels_from_graph

    d = Path(directory)
    g = read_graph(d)
    labels = read_labels(g, d / "labels.tsv") if (d / "labels.tsv").exists() else labels_from_graph(g)
    texts = read_item_texts(g, d / "items.tsv") if (d / "items.tsv").exists() else {}
    return HinDataset(g, labels, texts)


# -- walks ----------------------------------------------------------------------

def write_walks(walks: Iterable[Sequence[int]], path, g: HinGraph | None = None) -> None:
    name = g.name_of if g is not None else str
    with _open_w(path) as f:
        for w in walks:
            f.write(" ".join(name(int(v)) for v in w) + "\n")


def read_walk_tokens(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f if line.strip()]


def read_walks(path, g: HinGraph) -> list[np.ndarray]:
    out = []
    for i, toks in enumerate(read_walk_tokens(path), 1):
        try:
            out.append(np.array([g.id_of(t) for t in toks], dtype=np.int64))
        except GraphError as e:
            raise FormatError(f"{path}: walk {i}: {e}") from None
    return out


# -- embeddings -------------------------------------------------------------------

def write_embeddings(emb: EmbeddingTable, path, g: HinGraph | None = None) -> None:
    """Text format: ``N d`` header, then ``node v1 ... vd`` with 9 significant digits."""
    name = g.name_of if g is not None else str
    write_embedding_rows([name(int(v)) for v in emb.ids], emb.vectors, path)


def write_embedding_rows(names: Sequence[str], vectors: np.ndarray, path) -> None:
    with _open_w(path) as f:
        f.write(f"{len(names)} {vectors.shape[1]}\n")
        for n, row in zip(names, vectors):
            f.write(n + " " + " ".join(f"{x:.9g}" for x in row) + "\n")


def read_embedding_rows(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as f:
        head = f.readline().split()
        if len(head) != 2:
            raise FormatError(f"{path}: first line must be 'N d'")
        n, d = int(head[0]), int(head[1])
        names, rows = [], []
        for lineno, line in enumerate(f, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise FormatError(f"{path}:{lineno}: expected {d} values")
            names.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(names) != n:
        raise FormatError(f"{path}: header announces {n} rows, found {len(names)}")
    return names, np.array(rows, dtype=np.float64).reshape(n, d)


def read_embeddings(path, g: HinGraph | None = None) -> EmbeddingTable:
    names, vectors = read_embedding_rows(path)
    ids = [g.id_of(n) for n in names] if g is not None else [int(n) for n in names]
    return EmbeddingTable(np.array(ids, dtype=np.int64), vectors)


# -- binary models ------------------------------------------------------------------

def save_model(path, kind: str, params: Mapping[str, np.ndarray], header: dict | None = None) -> None:
    """Magic, version, JSON header length, JSON header, then float64 payload.

    Arrays are stored little-endian and row-major in header order.
    """
    names = list(params)
    head = dict(header or {})
    head.update({"kind": kind, "arrays": [[k, list(np.shape(params[k]))] for k in names]})
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(blob)) + blob)
        for k in names:
            f.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def load_model(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MODEL_MAGIC):
        raise FormatError(f"{path}: not a model file")
    off = len(MODEL_MAGIC)
    version, n = struct.unpack_from("<II", data, off)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    off += 8
    head = json.loads(data[off:off + n].decode("utf-8"))
    off += n
    if kind is not None and head.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind} model, found {head.get('kind')}")
    params = {}
    for name, shape in head["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
        params[name] = arr.astype(np.float64)
        off += 8 * size
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes after payload")
    return head, params


def save_gnn(model, path, g: HinGraph) -> None:
    save_model(path, "gnn", model.params, {
        "classes": [g.name_of(c) for c in model.classes], "activation": model.activation})


def load_gnn(path, g: HinGraph):
    from .gnn import GnnModel

    head, params = load_model(path, "gnn")
    return GnnModel(params, [g.id_of(c) for c in head["classes"]], head["activation"])


def save_mlp(model, path, g: HinGraph) -> None:
    params = dict(model.params)
    params["career_vectors"] = model.career_vectors
    save_model(path, "mlp", params, {"careers": [g.name_of(c) for c in model.careers]})


def load_mlp(path, g: HinGraph):
    from .predictor import MlpRanker

    head, params = load_model(path, "mlp")
    E = params.pop("career_vectors")
    return MlpRanker(params, [g.id_of(c) for c in head["careers"]], E)


# -- splits, rankings, reports ---------------------------------------------------------

def write_splits(plans: Sequence[SplitPlan], path, g: HinGraph) -> None:
    with _open_w(path) as f:
        f.write("fold\tset\tuser\n")
        for p in plans:
            for name, users in p.sets().items():
                for u in users:
                    f.write(f"{p.fold}\t{name}\t{g.name_of(u)}\n")


def read_splits(path, g: HinGraph) -> list[SplitPlan]:
    sets: dict[int, dict[str, list[int]]] = {}
    for lineno, (fold, name, user) in read_tsv(path, 3):
        if lineno == 1 and fold == "fold":
            continue
        if name not in ("embed", "train", "valid", "test"):
            raise FormatError(f"{path}:{lineno}: unknown set {name!r}")
        sets.setdefault(int(fold), {k: [] for k in ("embed", "train", "valid", "test")})
        sets[int(fold)][name].append(g.id_of(user))
    return [SplitPlan(*(tuple(sorted(s[k])) for k in ("embed", "train", "valid", "test")), fold=f)
            for f, s in sorted(sets.items())]


def write_rankings(rankings: Mapping[int, Sequence[tuple[int, float]]], path, g: HinGraph) -> None:
    with _open_w(path) as f:
        f.write("user_id\trank\tcareer_id\tprobability\n")
        for u in sorted(rankings):
            for rank, (c, p) in enumerate(rankings[u], 1):
                f.write(f"{g.name_of(u)}\t{rank}\t{g.name_of(c)}\t{p:.9g}\n")


def read_rankings(path, g: HinGraph) -> dict[int, list[tuple[int, float]]]:
    out: dict[int, list[tuple[int, int, float]]] = {}
    for lineno, (user, rank, career, prob) in read_tsv(path, 4):
        if lineno == 1 and user == "user_id":
            continue
        out.setdefault(g.id_of(user), []).append((int(rank), g.id_of(career), float(prob)))
    return {u: [(c, p) for _, c, p in sorted(rows)] for u, rows in out.items()}


def write_reports(reports: Iterable[EvalReport], path) -> None:
    with _open_w(path) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow([r.method, r.params, r.seed, r.split, repr(r.mrr), repr(r.diff_dp), repr(r.diff_eo)])


def read_reports(path) -> list[EvalReport]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
            raise FormatError(f"{path}: unexpected header {reader.fieldnames}")
        return [EvalReport(row["method"], row["params"], int(row["seed"]), int(row["split"]),
                           float(row["mrr"]), float(row["diff_dp"]), float(row["diff_eo"]))
                for row in reader]
