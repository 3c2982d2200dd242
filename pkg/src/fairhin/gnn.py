"""Two-layer mean-aggregation GNN for career classification with fairness penalties.

Each layer computes ``act([h_v || mean_{u in N(v)} h_u] W + b)``; a linear
output layer and a softmax give per-user career probabilities. Gradients
are derived by hand; the penalties are the squared per-class gaps between
group-averaged predicted probabilities.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import HinGraph
from .seeding import rng_for
from .skipgram import EmbeddingTable

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
FEATURE_DIM = 50

FeatureMatrix = EmbeddingTable


# -- features ----------------------------------------------------------------

def _token_slot(token: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    return h % dim, (1.0 if (h >> 63) & 1 else -1.0)


def hash_tokens(tokens: Sequence[str], dim: int = FEATURE_DIM) -> np.ndarray:
    """Mean of signed one-hot vectors, one per token; zero for no tokens."""
    out = np.zeros(dim)
    for tok in tokens:
        i, s = _token_slot(tok, dim)
        out[i] += s
    return out / len(tokens) if tokens else out


def build_features(g: HinGraph, item_texts: Mapping[int, Sequence[str]], dim: int = FEATURE_DIM,
                   user_type: str = "user", item_type: str = "item") -> FeatureMatrix:
    """Hashed title features for items; users get the mean of their items' features."""
    items = g.nodes_of_type(item_type)
    users = g.nodes_of_type(user_type)
    item_feat = np.array([hash_tokens(item_texts.get(int(i), ()), dim) for i in items]).reshape(-1, dim)
    row = {int(i): k for k, i in enumerate(items)}
    user_feat = np.zeros((len(users), dim))
    for k, u in enumerate(users):
        nb = g.neighbors(int(u), item_type)
        if len(nb):
            user_feat[k] = item_feat[[row[int(i)] for i in nb]].mean(axis=0)
    ids = np.concatenate([items, users])
    return FeatureMatrix(ids, np.vstack([item_feat, user_feat]))


# -- graph view ----------------------------------------------------------------

@dataclass
class GnnGraph:
    """Nodes of the included types with a row-normalised (mean) adjacency."""

    nodes: np.ndarray
    adj: sp.csr_matrix
    index: dict[int, int]

    @classmethod
    def from_hin(cls, g: HinGraph, types: Sequence[str] = ("user", "item")) -> "GnnGraph":
        nodes = np.sort(np.concatenate([g.nodes_of_type(t) for t in types]))
        index = {int(v): i for i, v in enumerate(nodes)}
        rows, cols = [], []
        for u, v, _ in g.edges():
            if u in index and v in index:
                rows += [index[u], index[v]]
                cols += [index[v], index[u]]
        n = len(nodes)
        a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
        return cls(nodes, sp.diags(inv) @ a, index)

    def feature_matrix(self, X: FeatureMatrix) -> np.ndarray:
        out = np.zeros((len(self.nodes), X.dim))
        for i, v in enumerate(self.nodes):
            if int(v) in X:
                out[i] = X[v]
        return out

    def rows(self, users: Sequence[int]) -> np.ndarray:
        return np.array([self.index[int(u)] for u in users], dtype=np.int64)


# -- model -------------------------------------------------------------------

_ACT = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, h: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, h: 1.0 - h * h),
}


@dataclass
class GnnModel:
    params: dict[str, np.ndarray]
    classes: list
    activation: str = "relu"
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, in_dim: int, hidden: int, classes: list, seed: int = 0,
             activation: str = "relu") -> "GnnModel":
        rng = rng_for(seed, "gnn-init")

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        k = len(classes)
        params = {
            "W1": glorot(2 * in_dim, hidden), "b1": np.zeros(hidden),
            "W2": glorot(2 * hidden, hidden), "b2": np.zeros(hidden),
            "Wo": glorot(hidden, k), "bo": np.zeros(k),
        }
        return cls(params, list(classes), activation)

    def copy(self) -> "GnnModel":
        return GnnModel({k: v.copy() for k, v in self.params.items()}, list(self.classes),
                        self.activation, dict(self.meta))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(model: GnnModel, adj, X):
    p = model.params
    act, _ = _ACT[model.activation]
    a1 = adj @ X
    c1 = np.hstack([X, a1])
    z1 = c1 @ p["W1"] + p["b1"]
    h1 = act(z1)
    a2 = adj @ h1
    c2 = np.hstack([h1, a2])
    z2 = c2 @ p["W2"] + p["b2"]
    h2 = act(z2)
    logits = h2 @ p["Wo"] + p["bo"]
    return softmax(logits), (c1, z1, h1, c2, z2, h2)


def _backward(model: GnnModel, adj, cache, d_logits):
    p = model.params
    _, dact = _ACT[model.activation]
    c1, z1, h1, c2, z2, h2 = cache
    hid = h1.shape[1]
    grads = {"Wo": h2.T @ d_logits, "bo": d_logits.sum(axis=0)}
    dz2 = (d_logits @ p["Wo"].T) * dact(z2, h2)
    grads["W2"] = c2.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dc2 = dz2 @ p["W2"].T
    dh1 = dc2[:, :hid] + adj.T @ dc2[:, hid:]
    dz1 = dh1 * dact(z1, h1)
    grads["W1"] = c1.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads


def gnn_forward(model: GnnModel, view: GnnGraph, X, users: Sequence[int]) -> np.ndarray:
    """Career probabilities (one row per user, columns follow ``model.classes``)."""
    Xm = X if isinstance(X, np.ndarray) else view.feature_matrix(X)
    probs, _ = _forward(model, view.adj, Xm)
    return probs[view.rows(users)]


# -- losses (value and gradient w.r.t. the probability rows) -------------------

def _check_groups(groups):
    groups = np.asarray(groups)
    if not (np.any(groups == 0) and np.any(groups == 1)):
        raise ValueError("both protected groups must be present")
    return groups


def loss_acc(probs, labels) -> float:
    """Mean negative log-probability of the true class."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    p = probs[np.arange(len(labels)), labels]
    if np.any(p < PROB_FLOOR):
        logger.debug("loss_acc: %d probabilities clamped", int(np.sum(p < PROB_FLOOR)))
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def loss_acc_grad(probs, labels) -> np.ndarray:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    n = len(labels)
    g = np.zeros_like(probs)
    p = probs[np.arange(n), labels]
    live = p >= PROB_FLOOR
    g[np.arange(n)[live], labels[live]] = -1.0 / (n * p[live])
    return g


def _dp_gaps(probs, groups):
    groups = _check_groups(groups)
    m0, m1 = groups == 0, groups == 1
    return probs[m0].mean(axis=0) - probs[m1].mean(axis=0), m0, m1


def loss_dp(probs, groups) -> float:
    """Sum over classes of the squared gap between group-mean probabilities."""
    gap, _, _ = _dp_gaps(np.asarray(probs), groups)
    return float(np.sum(gap ** 2))


def loss_dp_grad(probs, groups) -> np.ndarray:
    probs = np.asarray(probs)
    gap, m0, m1 = _dp_gaps(probs, groups)
    g = np.zeros_like(probs)
    g[m0] = 2.0 * gap / m0.sum()
    g[m1] = -2.0 * gap / m1.sum()
    return g


def _eo_terms(probs, groups, labels):
    groups = np.asarray(groups)
    labels = np.asarray(labels)
    terms = []
    for k in range(probs.shape[1]):
        s0 = (groups == 0) & (labels == k)
        s1 = (groups == 1) & (labels == k)
        n0, n1 = int(s0.sum()), int(s1.sum())
        if n0 == 0 or n1 == 0:
            if n0 or n1:
                logger.debug("loss_eo: class %d skipped (true counts %d/%d)", k, n0, n1)
            continue
        gap = probs[s0, k].sum() / n0 - probs[s1, k].sum() / n1
        terms.append((k, gap, s0, s1, n0, n1))
    return terms


def loss_eo(probs, groups, labels) -> float:
    """Squared per-class gaps of mean P(true class) among members whose true class is k.

    Classes absent from either group are skipped.
    """
    probs = np.asarray(probs)
    return float(sum(gap ** 2 for _, gap, *_ in _eo_terms(probs, groups, labels)))


def loss_eo_grad(probs, groups, labels) -> np.ndarray:
    probs = np.asarray(probs)
    g = np.zeros_like(probs)
    for k, gap, s0, s1, n0, n1 in _eo_terms(probs, groups, labels):
        g[s0, k] += 2.0 * gap / n0
        g[s1, k] -= 2.0 * gap / n1
    return g


def softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    return probs * (d_probs - np.sum(d_probs * probs, axis=1, keepdims=True))


@dataclass(frozen=True)
class FairLossConfig:
    mode: str = "none"  # "none", "dp" or "eo"
    lambda_dp: float = 0.0
    lambda_eo: float = 0.0

    def __post_init__(self):
        if self.mode not in ("none", "dp", "eo"):
            raise ValueError(f"unknown fairness mode {self.mode!r}")
        if self.lambda_dp < 0 or self.lambda_eo < 0:
            raise ValueError("fairness weights must be non-negative")
        if (self.mode != "dp" and self.lambda_dp) or (self.mode != "eo" and self.lambda_eo):
            raise ValueError("only the active penalty may carry a weight")

    @property
    def weight(self) -> float:
        return {"none": 0.0, "dp": self.lambda_dp, "eo": self.lambda_eo}[self.mode]


def objective(probs, labels, groups, fair: FairLossConfig) -> tuple[float, np.ndarray]:
    """Value and probability-gradient of ``L_acc + lambda * L_fair``."""
    value = loss_acc(probs, labels)
    grad = loss_acc_grad(probs, labels)
    lam = fair.weight
    if lam:
        if fair.mode == "dp":
            value += lam * loss_dp(probs, groups)
            grad = grad + lam * loss_dp_grad(probs, groups)
        else:
            value += lam * loss_eo(probs, groups, labels)
            grad = grad + lam * loss_eo_grad(probs, groups, labels)
    return value, grad


def loss_and_grads(model: GnnModel, view: GnnGraph, X: np.ndarray, rows: np.ndarray,
                   labels, groups, fair: FairLossConfig):
    """Objective on the users at ``rows`` and its gradient for every parameter."""
    probs, cache = _forward(model, view.adj, X)
    p = probs[rows]
    value, d_p = objective(p, labels, groups, fair)
    d_logits = np.zeros_like(probs)
    d_logits[rows] = softmax_backward(p, d_p)
    return value, _backward(model, view.adj, cache, d_logits)


# -- training ----------------------------------------------------------------

@dataclass(frozen=True)
class GnnConfig:
    hidden: int = 128
    lr: float = 0.05
    epochs: int = 300
    patience: int = 30
    activation: str = "relu"
    optimizer: str = "gd"  # or "adam"
    seed: int = 0


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            m_hat = m / (1 - self.b1 ** self.t)
            v_hat = v / (1 - self.b2 ** self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _gd_step(lr):
    def step(params, grads):
        for k, g in grads.items():
            params[k] -= lr * g
    return step


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, model):
        super().__init__(message)
        self.model = model


def train_gnn(view: GnnGraph, X, labels: Mapping[int, object], groups: Mapping[int, int],
              train_users: Sequence[int], valid_users: Sequence[int] = (),
              fair: FairLossConfig = FairLossConfig(), cfg: GnnConfig = GnnConfig(),
              classes: Sequence | None = None) -> GnnModel:
    """Full-batch gradient descent with early stopping on validation MRR.

    ``labels`` maps user id to career; ``groups`` maps user id to 0/1.
    Returns the parameters from the best validation epoch (the last epoch
    when there is no validation set).
    """
    if set(train_users) & set(valid_users):
        raise ValueError("train and validation users overlap")
    if classes is None:
        classes = sorted({labels[u] for u in list(train_users) + list(valid_users)}, key=str)
    cidx = {c: i for i, c in enumerate(classes)}
    Xm = X if isinstance(X, np.ndarray) else view.feature_matrix(X)
    rows = view.rows(train_users)
    y = np.array([cidx[labels[u]] for u in train_users])
    grp = np.array([groups[u] for u in train_users])
    v_rows = view.rows(valid_users)
    v_y = np.array([cidx[labels[u]] for u in valid_users])

    model = GnnModel.init(Xm.shape[1], cfg.hidden, list(classes), cfg.seed, cfg.activation)
    if cfg.optimizer == "adam":
        step = _Adam(cfg.lr).step
    elif cfg.optimizer == "gd":
        step = _gd_step(cfg.lr)
    else:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    best, best_mrr, stale = model.copy(), -np.inf, 0
    history = []
    for epoch in range(cfg.epochs):
        value, grads = loss_and_grads(model, view, Xm, rows, y, grp, fair)
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            last = best if len(valid_users) else model
            raise TrainingDiverged(f"non-finite GNN loss at epoch {epoch}", last.copy())
        step(model.params, grads)
        history.append(value)
        if len(valid_users):
            probs, _ = _forward(model, view.adj, Xm)
            score = _mrr_only(probs[v_rows], v_y)
            if score > best_mrr:
                best, best_mrr, stale = model.copy(), score, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    final = best if len(valid_users) else model
    final.meta.update({"loss_history": history, "best_valid_mrr": float(best_mrr),
                       "epochs_run": len(history), "fair": fair, "config": cfg})
    return final


def _mrr_only(probs, truth):
    order = np.argsort(-probs, axis=1, kind="stable")
    ranks = np.argmax(order == np.asarray(truth)[:, None], axis=1) + 1
    return float(np.mean(1.0 / ranks))
