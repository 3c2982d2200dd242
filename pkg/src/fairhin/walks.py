"""Meta-path guided random walks, with an optional group-reweighted kernel.

The standard kernel moves uniformly to a neighbour of the next meta-path
type. The fair kernel is used on career -> user steps: each user in the
advantaged group gets mass ``1/n_adv`` and each user in the disadvantaged
group gets ``r/n_dis`` before normalisation, so the two groups receive
aggregate probability ``1/(1+r)`` and ``r/(1+r)``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import GraphError, HinGraph
from .seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

CAREER = "career"


@dataclass(frozen=True)
class MetaPath:
    name: str
    types: tuple[str, ...]
    relations: tuple[str, ...]

    def __post_init__(self):
        if len(self.types) < 2:
            raise ValueError("a meta-path needs at least two node types")
        if len(self.relations) != len(self.types) - 1:
            raise ValueError("need exactly one relation between consecutive types")

    @property
    def cyclic(self) -> bool:
        return self.types[0] == self.types[-1]

    def validate(self, g: HinGraph) -> None:
        for i, rel_name in enumerate(self.relations):
            rel = g.relations.get(rel_name)
            if rel is None:
                raise GraphError(f"meta-path {self.name!r} uses unknown relation {rel_name!r}")
            pair = (self.types[i], self.types[i + 1])
            if pair not in ((rel.src_type, rel.dst_type), (rel.dst_type, rel.src_type)):
                raise GraphError(
                    f"meta-path {self.name!r}: relation {rel_name!r} does not connect "
                    f"{pair[0]!r} and {pair[1]!r}"
                )

    def __str__(self):
        return "->".join(t[0].upper() for t in self.types)


@dataclass(frozen=True)
class SamplerConfig:
    num_walks: int = 10
    walk_length: int = 10  # meta-path repetitions
    ratio: float = 1.0
    seed: int = 0
    mode: str = "standard"  # or "fair"
    literal_ratio: bool = False  # apply r to both groups, as the formula is printed

    def __post_init__(self):
        if self.mode not in ("standard", "fair"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.ratio < 1:
            raise ValueError("fair ratio must be >= 1")
        if self.walk_length < 1 or self.num_walks < 1:
            raise ValueError("num_walks and walk_length must be >= 1")


def builtin_metapaths(user="user", item="item", career=CAREER, like="like", choose="choose"):
    """The career-item-career and user-item-user meta-paths."""
    return [
        MetaPath("cuiuc", (career, user, item, user, career), (choose, like, like, choose)),
        MetaPath("uiu", (user, item, user), (like, like)),
    ]


def metapath_by_name(name: str, **names) -> MetaPath:
    for mp in builtin_metapaths(**names):
        if mp.name == name:
            return mp
    raise ValueError(f"unknown meta-path {name!r}")


# -- kernels ---------------------------------------------------------------

def _standard_arrays(g: HinGraph, v: int, next_type: str):
    ids = g.neighbors(v, next_type)
    if len(ids) == 0:
        return ids, np.zeros(0)
    return ids, np.full(len(ids), 1.0 / len(ids))


def _fair_arrays(g: HinGraph, v: int, r: float, literal: bool = False):
    ids = g.neighbors(v, g.protected_type)
    if len(ids) == 0:
        return ids, np.zeros(0)
    adv = g.group_array()[ids] == g.advantaged
    n_adv = int(adv.sum())
    n_dis = len(ids) - n_adv
    w_adv = (r if literal else 1.0) / n_adv if n_adv else 0.0
    w_dis = r / n_dis if n_dis else 0.0
    w = np.where(adv, w_adv, w_dis)
    return ids, w / w.sum()


def _as_map(ids, probs) -> dict[int, float]:
    out: dict[int, float] = {}
    for i, p in zip(ids.tolist(), probs.tolist()):
        out[i] = out.get(i, 0.0) + p
    return out


def transition_standard(g: HinGraph, v: int, next_type: str) -> dict[int, float]:
    """Uniform distribution over the neighbours of ``v`` of type ``next_type``.

    An empty dict means the walk cannot continue.
    """
    return _as_map(*_standard_arrays(g, v, next_type))


def transition_fair(g: HinGraph, v: int, r: float, literal: bool = False,
                    career_type: str = CAREER) -> dict[int, float]:
    """Group-reweighted distribution over the user neighbours of career ``v``.

    Disadvantaged-group members are up-weighted by ``r``. With
    ``literal=True`` both groups are multiplied by ``r``, which cancels after
    normalisation and reduces to per-group parity.
    """
    if g.type_of(v) != career_type:
        raise GraphError(f"node {v} is of type {g.type_of(v)!r}, not {career_type!r}")
    return _as_map(*_fair_arrays(g, v, r, literal))


def _invert(ids, cdf, u):
    """Cumulative-sum inversion over the ascending-id neighbour order."""
    j = np.searchsorted(cdf, u, side="right")
    return ids[np.minimum(j, len(ids) - 1)]


def sample_steps(g: HinGraph, v: int, next_type: str, n: int, seed: int = 0,
                 mode: str = "standard", r: float = 1.0, literal: bool = False,
                 career_type: str = CAREER) -> np.ndarray:
    """``n`` independent single steps from ``v``, drawn exactly as the walker draws them."""
    if mode == "fair" and g.type_of(v) == career_type and next_type == g.protected_type:
        ids, p = _fair_arrays(g, v, r, literal)
    else:
        ids, p = _standard_arrays(g, v, next_type)
    if len(ids) == 0:
        return np.zeros(0, dtype=np.int64)
    u = rng_for(seed, "steps", v, next_type).random(n)
    return _invert(ids, np.cumsum(p), u)


# -- walk generation ---------------------------------------------------------

def _walks_for_starts(g, mp, cfg, starts, career_type):
    fair = cfg.mode == "fair"
    protected = g.protected_type
    base = derive_seed(cfg.seed, "walks", mp.name)
    cache: dict[tuple[int, str], tuple[np.ndarray, np.ndarray]] = {}

    def kernel(v, cur_type, next_type):
        key = (v, next_type)
        hit = cache.get(key)
        if hit is None:
            if fair and cur_type == career_type and next_type == protected:
                ids, p = _fair_arrays(g, v, cfg.ratio, cfg.literal_ratio)
            else:
                ids, p = _standard_arrays(g, v, next_type)
            hit = (ids, np.cumsum(p))
            cache[key] = hit
        return hit

    steps = list(zip(mp.types[:-1], mp.types[1:]))
    walks = []
    for s in starts:
        for k in range(cfg.num_walks):
            rng = np.random.default_rng([base, int(s), k])
            walk = [int(s)]
            cur = int(s)
            dead = False
            for _ in range(cfg.walk_length):
                for cur_type, next_type in steps:
                    ids, cdf = kernel(cur, cur_type, next_type)
                    if len(ids) == 0:
                        dead = True
                        break
                    cur = int(_invert(ids, cdf, rng.random()))
                    walk.append(cur)
                if dead:
                    break
            if len(walk) >= 2:
                walks.append(walk)
    return walks


def generate_walks(g: HinGraph, mp: MetaPath, cfg: SamplerConfig,
                   career_type: str = CAREER, workers: int = 1) -> list[list[int]]:
    """Walks from every node of the meta-path's first type.

    Each start node contributes ``cfg.num_walks`` walks of up to
    ``cfg.walk_length`` meta-path repetitions. A walk that hits a dead end is
    kept (truncated) when it has at least two nodes. Every (start, index)
    pair draws from its own derived stream, so the corpus does not depend on
    ``workers``.
    """
    mp.validate(g)
    if cfg.walk_length > 1 and not mp.cyclic:
        raise ValueError(f"meta-path {mp.name!r} cannot be repeated: endpoints differ")
    starts = g.nodes_of_type(mp.types[0]).tolist()
    if workers <= 1 or len(starts) < 2:
        return _walks_for_starts(g, mp, cfg, starts, career_type)
    chunks = [c.tolist() for c in np.array_split(np.asarray(starts), workers) if len(c)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_walks_for_starts, *zip(*[(g, mp, cfg, c, career_type) for c in chunks]))
        return [w for part in parts for w in part]


def generate_corpus(g: HinGraph, metapaths: Sequence[MetaPath], cfg: SamplerConfig,
                    career_type: str = CAREER, workers: int = 1) -> list[list[int]]:
    corpus = []
    for mp in metapaths:
        corpus.extend(generate_walks(g, mp, cfg, career_type, workers))
    return corpus


def is_valid_walk(g: HinGraph, mp: MetaPath, walk: Sequence[int]) -> bool:
    """Check a walk edge-by-edge against ``g`` and type-by-type against ``mp``."""
    period = len(mp.types) - 1
    for i, v in enumerate(walk):
        if g.type_of(v) != mp.types[i % period]:
            return False
        if i and v not in set(g.neighbors(walk[i - 1], g.type_of(v)).tolist()):
            return False
    return True
