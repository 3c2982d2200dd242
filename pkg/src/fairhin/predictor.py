"""Career ranker on top of node embeddings.

A one-hidden-layer map turns a user embedding into a query vector; each
career is scored by the inner product of the query with its (frozen)
career embedding, and a softmax over careers gives the ranking.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .seeding import rng_for
from .skipgram import EmbeddingTable


@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 128
    lr: float = 0.05
    epochs: int = 200
    patience: int = 20
    seed: int = 0


@dataclass
class MlpRanker:
    params: dict[str, np.ndarray]
    careers: list[int]  # node ids, ascending
    career_vectors: np.ndarray
    meta: dict = field(default_factory=dict)

    def copy(self) -> "MlpRanker":
        return MlpRanker({k: v.copy() for k, v in self.params.items()}, list(self.careers),
                         self.career_vectors.copy(), dict(self.meta))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logits(params, E, U):
    h = np.tanh(U @ params["W1"] + params["b1"])
    q = h @ params["W2"] + params["b2"]
    return q @ E.T, h


def mlp_loss_and_grads(params: dict, career_vectors: np.ndarray, U: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over careers and its parameter gradients."""
    logits, h = _logits(params, career_vectors, U)
    P = _softmax(logits)
    n = len(y)
    loss = float(-np.mean(np.log(np.maximum(P[np.arange(n), y], 1e-300))))
    dl = P.copy()
    dl[np.arange(n), y] -= 1.0
    dl /= n
    dq = dl @ career_vectors
    dz = (dq @ params["W2"].T) * (1.0 - h * h)
    grads = {"W2": h.T @ dq, "b2": dq.sum(axis=0), "W1": U.T @ dz, "b1": dz.sum(axis=0)}
    return loss, grads


def init_params(dim: int, hidden: int, seed: int) -> dict[str, np.ndarray]:
    rng = rng_for(seed, "mlp-init")
    l1 = np.sqrt(6.0 / (dim + hidden))
    return {"W1": rng.uniform(-l1, l1, (dim, hidden)), "b1": np.zeros(hidden),
            "W2": rng.uniform(-l1, l1, (hidden, dim)), "b2": np.zeros(dim)}


def predict_proba(m: MlpRanker, emb: EmbeddingTable, users: Sequence[int]) -> np.ndarray:
    """Career probabilities, columns ordered as ``m.careers``."""
    for u in users:
        if u not in emb:
            raise KeyError(f"unknown user {u}")
    logits, _ = _logits(m.params, m.career_vectors, emb.rows(users))
    return _softmax(logits)


def _mrr(P, y):
    order = np.argsort(-P, axis=1, kind="stable")
    ranks = np.argmax(order == y[:, None], axis=1) + 1
    return float(np.mean(1.0 / ranks))


def train_mlp(emb: EmbeddingTable, pairs: Sequence[tuple[int, int]], careers: Sequence[int],
              valid_pairs: Sequence[tuple[int, int]] = (), cfg: MlpConfig = MlpConfig()) -> MlpRanker:
    """Fit the ranker on (user, career) pairs by full-batch gradient descent.

    Career embeddings are read from ``emb`` and kept fixed. Early stopping
    tracks validation MRR when ``valid_pairs`` is given.
    """
    careers = sorted(int(c) for c in careers)
    for u, c in list(pairs) + list(valid_pairs):
        if u not in emb or c not in emb:
            raise KeyError(f"missing embedding for pair ({u}, {c})")
    missing = [c for c in careers if c not in emb]
    if missing:
        raise KeyError(f"missing embedding for career(s) {missing}")
    cidx = {c: i for i, c in enumerate(careers)}
    E = emb.rows(careers)
    U = emb.rows([u for u, _ in pairs])
    y = np.array([cidx[int(c)] for _, c in pairs])
    Uv = emb.rows([u for u, _ in valid_pairs]) if len(valid_pairs) else None
    yv = np.array([cidx[int(c)] for _, c in valid_pairs])

    model = MlpRanker(init_params(emb.dim, cfg.hidden, cfg.seed), careers, E)
    best, best_mrr, stale = model.copy(), -np.inf, 0
    history = []
    for _ in range(cfg.epochs):
        loss, grads = mlp_loss_and_grads(model.params, E, U, y)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite MLP loss")
        history.append(loss)
        for k, g in grads.items():
            model.params[k] -= cfg.lr * g
        if Uv is not None:
            logits, _ = _logits(model.params, E, Uv)
            score = _mrr(_softmax(logits), yv)
            if score > best_mrr:
                best, best_mrr, stale = model.copy(), score, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    final = best if Uv is not None else model
    final.meta.update({"loss_history": history, "best_valid_mrr": float(best_mrr)})
    return final


def predict_ranking(m: MlpRanker, emb: EmbeddingTable, user: int) -> list[tuple[int, float]]:
    """Careers by descending probability; ties go to the lower career id."""
    p = predict_proba(m, emb, [user])[0]
    order = np.argsort(-p, kind="stable")
    return [(m.careers[i], float(p[i])) for i in order]
