"""Remove the group-difference direction from user embeddings."""
from __future__ import annotations

import logging
from typing import Iterable, Mapping

import numpy as np

from .skipgram import EmbeddingTable

logger = logging.getLogger(__name__)

_ZERO = 1e-12


class ZeroDirection(ValueError):
    """The requested direction has (numerically) zero norm."""


def group_direction(emb: EmbeddingTable, members: Iterable[int]) -> np.ndarray:
    """Unit vector along the sum of the members' embeddings."""
    members = list(members)
    if not members:
        raise ValueError("empty member list")
    total = emb.rows(members).sum(axis=0)
    norm = np.linalg.norm(total)
    if norm <= _ZERO:
        raise ZeroDirection("member embeddings sum to the zero vector")
    return total / norm


def bias_direction(v_g0: np.ndarray, v_g1: np.ndarray) -> np.ndarray:
    diff = np.asarray(v_g0, dtype=np.float64) - np.asarray(v_g1, dtype=np.float64)
    norm = np.linalg.norm(diff)
    if norm <= _ZERO:
        raise ZeroDirection("group directions coincide; nothing to remove")
    return diff / norm


def debias(e_u: np.ndarray, v_b: np.ndarray) -> np.ndarray:
    """Project ``e_u`` (a vector or a stack of row vectors) orthogonally to ``v_b``."""
    e_u = np.asarray(e_u, dtype=np.float64)
    v_b = np.asarray(v_b, dtype=np.float64)
    if e_u.shape[-1] != v_b.shape[0]:
        raise ValueError(f"dimension mismatch: {e_u.shape[-1]} vs {v_b.shape[0]}")
    out = e_u - np.multiply.outer(e_u @ v_b, v_b)
    # one correction pass removes the rounding residue along v_b
    return out - np.multiply.outer(out @ v_b, v_b)


def debias_all(emb: EmbeddingTable, groups: Mapping[int, int],
               fit_users: Iterable[int] | None = None) -> EmbeddingTable:
    """Project every user vector in ``emb`` off the bias direction.

    ``groups`` maps user id to group 0/1 and defines which rows are users;
    other rows (items, careers) are returned untouched. The direction is
    estimated from ``fit_users`` (default: every user in ``emb``).
    If the direction degenerates the table is returned unchanged.
    """
    users = [u for u in sorted(groups) if u in emb]
    fit = users if fit_users is None else [u for u in sorted(fit_users) if u in emb]
    g0 = [u for u in fit if groups[u] == 0]
    g1 = [u for u in fit if groups[u] == 1]
    if not g0 or not g1:
        raise ValueError("both groups need at least one embedded user")
    try:
        v_b = bias_direction(group_direction(emb, g0), group_direction(emb, g1))
    except ZeroDirection as e:
        logger.warning("skipping projection: %s", e)
        out = emb.with_vectors(emb.vectors.copy())
        out.meta["bias_direction"] = None
        return out
    vectors = emb.vectors.copy()
    idx = [emb.index_of(u) for u in users]
    vectors[idx] = debias(vectors[idx], v_b)
    out = emb.with_vectors(vectors)
    out.meta["bias_direction"] = v_b
    return out
