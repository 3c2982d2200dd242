"""Nested cross-validation splits and the balanced embedding-training graph."""
from __future__ import annotations

import logging
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .graph import HinGraph
from .seeding import rng_for

logger = logging.getLogger(__name__)

# one embedding slot per 2.5 positions, fold slots interleaved: 4:2:2:2 per ten users
_OUTER = ("E", 0, "E", 1, "E", 2, "E", 0, 1, 2)
_INNER = ("T", "T", "T", "V")


@dataclass(frozen=True)
class SplitPlan:
    embed: tuple[int, ...]
    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]
    fold: int = 0

    def sets(self) -> dict[str, tuple[int, ...]]:
        return {"embed": self.embed, "train": self.train, "valid": self.valid, "test": self.test}

    def gnn_train(self) -> tuple[int, ...]:
        """Prediction training set for models that need no embedding data (7:1:2)."""
        return tuple(sorted(self.embed + self.train))


def _stratified_order(users: Sequence[int], labels: Mapping[int, object] | None,
                      rng: np.random.Generator) -> list[int]:
    """Users grouped by career (sorted), random order within each career."""
    users = sorted(users)
    keys = rng.permutation(len(users))
    if labels is None:
        return [users[i] for i in np.argsort(keys)]
    careers = sorted({labels[u] for u in users}, key=str)
    rank = {c: i for i, c in enumerate(careers)}
    idx = sorted(range(len(users)), key=lambda i: (rank[labels[users[i]]], keys[i]))
    return [users[i] for i in idx]


def nested_cv_split(users: Sequence[int], labels: Mapping[int, object] | None = None,
                    seed: int = 0, folds: int = 3) -> list[SplitPlan]:
    """Embedding / train / validation / test plans in proportions 4:3:1:2.

    40% of the users go to embedding training; the rest is cut into three
    outer folds. Each plan tests on one fold and splits the other two 3:1
    into train and validation. Assignment walks the users in career-sorted
    order so every sufficiently large career reaches every set.
    """
    if not users:
        raise ValueError("empty user set")
    if folds != 3:
        raise ValueError("the 4:3:1:2 layout needs exactly three outer folds")
    if labels is not None:
        small = [c for c, n in Counter(labels[u] for u in users).items() if n < 10]
        if small:
            warnings.warn(f"{len(small)} career(s) have fewer than 10 users; "
                          "falling back to non-stratified splits")
            labels = None
    order = _stratified_order(users, labels, rng_for(seed, "split", "outer"))
    embed, fold_sets = [], defaultdict(list)
    for i, u in enumerate(order):
        slot = _OUTER[i % len(_OUTER)]
        (embed if slot == "E" else fold_sets[slot]).append(u)

    plans = []
    for f in range(folds):
        rest = [u for k in range(folds) if k != f for u in fold_sets[k]]
        inner = _stratified_order(rest, labels, rng_for(seed, "split", "inner", f))
        train = [u for i, u in enumerate(inner) if _INNER[i % 4] == "T"]
        valid = [u for i, u in enumerate(inner) if _INNER[i % 4] == "V"]
        plans.append(SplitPlan(tuple(sorted(embed)), tuple(sorted(train)),
                               tuple(sorted(valid)), tuple(sorted(fold_sets[f])), fold=f))
    return plans


def balance_data(g: HinGraph, embed_users: Sequence[int], labels: Mapping[int, object],
                 seed: int = 0) -> tuple[HinGraph, list[int]]:
    """Down-sample advantaged-group embedding users per career to parity.

    For each career, ``max(0, n_adv - n_dis)`` advantaged users drawn
    uniformly at random (from the ascending-id list) lose all their edges.
    Node ids and every other user are untouched, so prediction splits stay
    identical. Returns the reduced graph and the removed user ids.
    """
    rng = rng_for(seed, "balance")
    by_career: dict[object, list[int]] = defaultdict(list)
    for u in sorted(embed_users):
        by_career[labels[u]].append(u)
    removed = []
    for career in sorted(by_career, key=str):
        members = by_career[career]
        adv = [u for u in members if g.group_of(u) == g.advantaged]
        n_dis = len(members) - len(adv)
        excess = len(adv) - n_dis
        if excess > 0:
            pick = rng.choice(len(adv), size=excess, replace=False)
            removed.extend(adv[i] for i in sorted(pick))
    drop = set(removed)
    logger.info("balance_data: removing %d advantaged users", len(drop))
    reduced = g.drop_edges(lambda u, v, rel: u not in drop and v not in drop)
    return reduced, sorted(removed)
