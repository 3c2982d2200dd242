"""Type-aware skip-gram with negative sampling over walk corpora.

Negatives for a context node are drawn from the unigram^0.75 distribution
restricted to nodes of the same type, which keeps the objective decomposed
by node type.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    """Dense vectors keyed by node id; ``ids`` is sorted ascending."""

    ids: np.ndarray
    vectors: np.ndarray
    context: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.ids) != len(self.vectors):
            raise ValueError("vectors must be a 2-D array with one row per id")
        order = np.argsort(self.ids, kind="stable")
        if np.any(order != np.arange(len(order))):
            self.ids = self.ids[order]
            self.vectors = self.vectors[order]
            if self.context is not None:
                self.context = self.context[order]
        if len(self.ids) > 1 and np.any(np.diff(self.ids) == 0):
            raise ValueError("duplicate node id in embedding table")
        self._pos = {int(n): i for i, n in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, node) -> bool:
        return int(node) in self._pos

    def __getitem__(self, node) -> np.ndarray:
        return self.vectors[self.index_of(node)]

    def index_of(self, node) -> int:
        try:
            return self._pos[int(node)]
        except KeyError:
            raise KeyError(f"no embedding for node {node}") from None

    def rows(self, nodes) -> np.ndarray:
        return self.vectors[[self.index_of(n) for n in nodes]]

    def with_vectors(self, vectors) -> "EmbeddingTable":
        return EmbeddingTable(self.ids.copy(), vectors, self.context, dict(self.meta))


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 128
    negatives: int = 5
    window: int = 5
    alpha: float = 0.025
    min_alpha: float = 1e-4
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.negatives < 1 or self.window < 1 or self.epochs < 1:
            raise ValueError("dim > 0, negatives >= 1, window >= 1 and epochs >= 1 required")


@dataclass
class FrequencyTable:
    """Occurrence counts and per-type negative-sampling tables.

    ``nodes`` is the sorted corpus vocabulary. For each node type code ``t``
    the slice ``neg_start[t]:neg_start[t + 1]`` of ``neg_index``/``neg_cdf``
    holds the vocabulary positions of that type and the cumulative
    unigram^0.75 distribution over them.
    """

    nodes: np.ndarray
    counts: np.ndarray
    type_of: np.ndarray
    neg_start: np.ndarray
    neg_index: np.ndarray
    neg_cdf: np.ndarray

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.nodes.tolist(), self.counts.tolist()))

    def negative_distribution(self, type_code: int) -> dict[int, float]:
        a, b = self.neg_start[type_code], self.neg_start[type_code + 1]
        p = np.diff(np.concatenate([[0.0], self.neg_cdf[a:b]]))
        return dict(zip(self.nodes[self.neg_index[a:b]].tolist(), p.tolist()))


def build_frequency_table(corpus: Sequence[Sequence[int]], node_types=None,
                          power: float = 0.75) -> FrequencyTable:
    """Count node occurrences; ``node_types[v]`` gives an int type code per node id.

    Without ``node_types`` every node shares one type.
    """
    if not corpus or not any(len(w) for w in corpus):
        raise ValueError("empty corpus")
    flat = np.concatenate([np.asarray(w, dtype=np.int64) for w in corpus if len(w)])
    if flat.min() < 0:
        raise ValueError("negative node id in corpus")
    nodes, counts = np.unique(flat, return_counts=True)
    if node_types is None:
        types = np.zeros(len(nodes), dtype=np.int64)
    else:
        node_types = np.asarray(node_types)
        if nodes[-1] >= len(node_types):
            raise ValueError(f"corpus node {int(nodes[-1])} is absent from the graph")
        types = node_types[nodes].astype(np.int64)
    n_types = int(types.max()) + 1
    order = np.lexsort((nodes, types))
    start = np.searchsorted(types[order], np.arange(n_types + 1))
    cdf = np.empty(len(nodes))
    for t in range(n_types):
        seg = order[start[t]:start[t + 1]]
        if len(seg) == 0:
            continue
        w = counts[seg].astype(np.float64) ** power
        c = np.cumsum(w)
        cdf[start[t]:start[t + 1]] = c / c[-1]
    return FrequencyTable(nodes, counts, types, start.astype(np.int64), order.astype(np.int64), cdf)


# -- numeric core ---------------------------------------------------------------

@numba.njit(cache=True)
def _log1pexp_neg(x):
    # -log(sigmoid(x)), stable for large |x|
    if x > 0:
        return math.log1p(math.exp(-x))
    return -x + math.log1p(math.exp(x))


@numba.njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True)
def sgns_loss_grad(W, C, center, targets, labels, g_center, g_targets):
    """Loss of one (center, context, negatives) tuple and its gradients.

    ``targets[0]`` is the positive context (label 1), the rest are negatives
    (label 0). Writes d loss / d W[center] into ``g_center`` and
    d loss / d C[targets[j]] into ``g_targets[j]``; returns the loss.
    """
    d = W.shape[1]
    for k in range(d):
        g_center[k] = 0.0
    loss = 0.0
    for j in range(targets.shape[0]):
        t = targets[j]
        f = 0.0
        for k in range(d):
            f += W[center, k] * C[t, k]
        if labels[j] == 1:
            loss += _log1pexp_neg(f)
        else:
            loss += _log1pexp_neg(-f)
        coef = _sigmoid(f) - labels[j]
        for k in range(d):
            g_center[k] += coef * C[t, k]
            g_targets[j, k] = coef * W[center, k]
    return loss


@numba.njit(cache=True)
def _draw(neg_index, neg_cdf, a, b):
    u = np.random.random()
    lo = a
    hi = b - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if neg_cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return neg_index[lo]


@numba.njit(cache=True)
def _train_kernel(tokens, offsets, orders, tcode, neg_start, neg_index, neg_cdf,
                  W, C, window, negatives, alpha0, min_alpha, seed, epoch_loss):
    np.random.seed(seed)
    n_walks = offsets.shape[0] - 1
    total = tokens.shape[0] * orders.shape[0]
    done = 0
    d = W.shape[1]
    targets = np.empty(negatives + 1, dtype=np.int64)
    labels = np.zeros(negatives + 1, dtype=np.int64)
    labels[0] = 1
    g_center = np.empty(d)
    g_targets = np.empty((negatives + 1, d))
    for ep in range(orders.shape[0]):
        ep_loss = 0.0
        ep_pairs = 0
        for oi in range(n_walks):
            w = orders[ep, oi]
            a = offsets[w]
            b = offsets[w + 1]
            for i in range(a, b):
                lr = alpha0 * (1.0 - done / total)
                if lr < min_alpha:
                    lr = min_alpha
                done += 1
                center = tokens[i]
                lo = max(a, i - window)
                hi = min(b, i + window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    ctx = tokens[j]
                    targets[0] = ctx
                    t = tcode[ctx]
                    s0 = neg_start[t]
                    s1 = neg_start[t + 1]
                    for m in range(1, negatives + 1):
                        neg = _draw(neg_index, neg_cdf, s0, s1)
                        tries = 0
                        while neg == ctx and tries < 10 and s1 - s0 > 1:
                            neg = _draw(neg_index, neg_cdf, s0, s1)
                            tries += 1
                        targets[m] = neg
                    loss = sgns_loss_grad(W, C, center, targets, labels, g_center, g_targets)
                    if not math.isfinite(loss):
                        return ep, i
                    ep_loss += loss
                    ep_pairs += 1
                    for m in range(negatives + 1):
                        t2 = targets[m]
                        for k in range(d):
                            C[t2, k] -= lr * g_targets[m, k]
                    for k in range(d):
                        W[center, k] -= lr * g_center[k]
        epoch_loss[ep] = ep_loss / max(ep_pairs, 1)
    return -1, -1


def train_skipgram(corpus: Sequence[Sequence[int]], cfg: SkipGramConfig,
                   node_types=None, freq: FrequencyTable | None = None) -> EmbeddingTable:
    """Train center/context vectors on ``corpus`` (lists of node ids).

    Deterministic for a given seed. The corpus is put in canonical order
    before the seeded per-epoch shuffle, so line order in a walk file does
    not affect the result. ``meta['epoch_loss']`` records the mean
    per-pair loss of each epoch.
    """
    if freq is None:
        freq = build_frequency_table(corpus, node_types)
    walks = sorted(tuple(int(x) for x in w) for w in corpus if len(w))
    pos = {int(n): i for i, n in enumerate(freq.nodes)}
    try:
        tokens = np.fromiter((pos[x] for w in walks for x in w), dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"corpus node {e.args[0]} missing from frequency table") from None
    offsets = np.zeros(len(walks) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(w) for w in walks])

    rng = rng_for(cfg.seed, "skipgram")
    V, d = len(freq.nodes), cfg.dim
    W = (rng.random((V, d)) - 0.5) / d
    C = np.zeros((V, d))
    orders = np.stack([rng.permutation(len(walks)) for _ in range(cfg.epochs)]).astype(np.int64)
    epoch_loss = np.zeros(cfg.epochs)
    kernel_seed = derive_seed(cfg.seed, "negatives") % (2**32)
    ep, at = _train_kernel(tokens, offsets, orders, freq.type_of, freq.neg_start, freq.neg_index,
                           freq.neg_cdf, W, C, cfg.window, cfg.negatives, cfg.alpha,
                           cfg.min_alpha, kernel_seed, epoch_loss)
    if ep >= 0:
        raise FloatingPointError(
            f"non-finite skip-gram loss in epoch {ep} at token {at} "
            f"(node {int(freq.nodes[tokens[at]])}); max |W| = {np.nanmax(np.abs(W)):.3g}"
        )
    meta = {"epoch_loss": epoch_loss.tolist(), "config": cfg}
    return EmbeddingTable(freq.nodes.copy(), W, C, meta)
