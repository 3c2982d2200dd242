"""MovieLens-1M loader and a synthetic career network with planted gender bias."""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import HinGraph, ProtectedAttribute, Relation, build_graph, check_single_edge
from .seeding import rng_for

logger = logging.getLogger(__name__)

USER, ITEM, CAREER = "user", "item", "career"
LIKE = Relation("like", USER, ITEM)
CHOOSE = Relation("choose", USER, CAREER)
DATA_ENV = "FAIRHIN_DATA"

ML_OCCUPATIONS = {
    0: "other", 1: "academic/educator", 2: "artist", 3: "clerical/admin",
    4: "college/grad student", 5: "customer service", 6: "doctor/health care",
    7: "executive/managerial", 8: "farmer", 9: "homemaker", 10: "K-12 student",
    11: "lawyer", 12: "programmer", 13: "retired", 14: "sales/marketing",
    15: "scientist", 16: "self-employed", 17: "technician/engineer",
    18: "tradesman/craftsman", 19: "unemployed", 20: "writer",
}
ML_REMOVED = ("other", "K-12 student", "retired", "unemployed")


@dataclass
class HinDataset:
    graph: HinGraph
    labels: dict[int, int]  # user id -> career node id
    item_texts: dict[int, list[str]] = field(default_factory=dict)

    @property
    def users(self) -> list[int]:
        return sorted(self.labels)

    @property
    def careers(self) -> list[int]:
        return self.graph.nodes_of_type(CAREER).tolist()

    @property
    def groups(self) -> dict[int, int]:
        return dict(self.graph.attr.groups)


def labels_from_graph(g: HinGraph, relation: str = "choose") -> dict[int, int]:
    labels = {}
    for u, v, rel in g.edges():
        if rel.name == relation:
            labels[u] = v
    return labels


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


# -- MovieLens ---------------------------------------------------------------

def _read_dat(path: Path, n_fields: int):
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, encoding="latin-1", newline="\n") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != n_fields:
                raise ValueError(f"{path.name}:{lineno}: expected {n_fields} '::' fields, got {len(parts)}")
            yield lineno, parts


def default_movielens_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, "data")) / "ml-1m"


def load_movielens(path: str | os.PathLike, removed=ML_REMOVED) -> HinDataset:
    """Build the user-movie-career network from the raw ``.dat`` files.

    Users whose occupation is in ``removed`` are dropped. Every rating, of
    any value, becomes one like edge; movies nobody retained rated are left out.
    """
    path = Path(path)
    users = {}
    for lineno, (uid, gender, _age, occ, _zip) in _read_dat(path / "users.dat", 5):
        if gender not in ("M", "F"):
            raise ValueError(f"users.dat:{lineno}: gender must be M or F, got {gender!r}")
        try:
            occupation = ML_OCCUPATIONS[int(occ)]
        except (KeyError, ValueError):
            raise ValueError(f"users.dat:{lineno}: bad occupation {occ!r}") from None
        if occupation in removed:
            continue
        users[int(uid)] = (gender, occupation)
    titles = {}
    for lineno, (mid, title, _genres) in _read_dat(path / "movies.dat", 3):
        titles[int(mid)] = title
    rated: dict[int, set[int]] = {}
    for lineno, (uid, mid, _rating, _ts) in _read_dat(path / "ratings.dat", 4):
        uid, mid = int(uid), int(mid)
        if mid not in titles:
            raise ValueError(f"ratings.dat:{lineno}: unknown movie {mid}")
        if uid in users:
            rated.setdefault(uid, set()).add(mid)

    user_ids = sorted(users)
    movie_ids = sorted({m for ms in rated.values() for m in ms})
    careers = sorted({occ for _, occ in users.values()})
    names = ([f"u{u}" for u in user_ids] + [f"m{m}" for m in movie_ids]
             + [f"c:{_slug(c)}" for c in careers])
    uid_of = {u: i for i, u in enumerate(user_ids)}
    mid_of = {m: len(user_ids) + i for i, m in enumerate(movie_ids)}
    cid_of = {c: len(user_ids) + len(movie_ids) + i for i, c in enumerate(careers)}
    nodes = ([(uid_of[u], USER) for u in user_ids] + [(mid_of[m], ITEM) for m in movie_ids]
             + [(cid_of[c], CAREER) for c in careers])
    edges = [(uid_of[u], mid_of[m], LIKE) for u in user_ids for m in sorted(rated.get(u, ()))]
    edges += [(uid_of[u], cid_of[users[u][1]], CHOOSE) for u in user_ids]
    # male users form group 0, female users group 1
    groups = {uid_of[u]: (0 if users[u][0] == "M" else 1) for u in user_ids}
    g = build_graph(nodes, edges, ProtectedAttribute("gender", USER, groups), names=names)
    check_single_edge(g, CHOOSE.name)
    texts = {mid_of[m]: tokenize(titles[m]) for m in movie_ids}
    return HinDataset(g, labels_from_graph(g), texts)


# -- synthetic ----------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-bias career network.

    ``users[c] = (n_group0, n_group1)`` for career ``c``. Each like is drawn
    with probability ``beta`` from the user's stereotyped pool and otherwise
    from all items. The stereotyped pool of a (career, group) user is the
    career's item pool (chosen with probability ``career_signal``) or the
    group's item pool.
    """

    users: tuple[tuple[int, int], ...] = ((36, 14), (32, 18), (20, 30), (22, 28))
    n_items: int = 200
    beta: float = 0.8
    likes_per_user: int = 10
    career_signal: float = 0.15
    career_pool: int = 25
    group_pool: int = 25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 <= self.career_signal <= 1.0:
            raise ValueError("career_signal must lie in [0, 1]")
        if not self.users or any(a <= 0 or b <= 0 for a, b in self.users):
            raise ValueError("user counts must be positive")
        if self.n_items <= 0 or self.likes_per_user <= 0:
            raise ValueError("item and like counts must be positive")
        if len(self.users) * self.career_pool + 2 * self.group_pool > self.n_items:
            raise ValueError("item pools do not fit in n_items")
        if self.likes_per_user > min(self.career_pool, self.group_pool):
            raise ValueError("likes_per_user must not exceed the pool sizes")

    def career_items(self, c: int) -> range:
        return range(c * self.career_pool, (c + 1) * self.career_pool)

    def group_items(self, grp: int) -> range:
        base = len(self.users) * self.career_pool
        return range(base + grp * self.group_pool, base + (grp + 1) * self.group_pool)

    def stereotyped_items(self, c: int, grp: int) -> set[int]:
        return set(self.career_items(c)) | set(self.group_items(grp))


def generate_synthetic(spec: SyntheticSpec) -> HinDataset:
    """Deterministic synthetic network; item ``j`` of the spec is node ``n_users + j``."""
    rng = rng_for(spec.seed, "synthetic")
    members = [(c, grp) for c, counts in enumerate(spec.users) for grp in (0, 1)
               for _ in range(counts[grp])]
    order = rng.permutation(len(members))
    members = [members[i] for i in order]
    n_users, n_careers = len(members), len(spec.users)
    item0 = n_users
    career0 = n_users + spec.n_items

    nodes = [(i, USER) for i in range(n_users)]
    nodes += [(item0 + j, ITEM) for j in range(spec.n_items)]
    nodes += [(career0 + c, CAREER) for c in range(n_careers)]
    names = ([f"u{i:05d}" for i in range(n_users)] + [f"i{j:05d}" for j in range(spec.n_items)]
             + [f"c{c:02d}" for c in range(n_careers)])

    edges = []
    for u, (c, grp) in enumerate(members):
        career_pool = np.asarray(spec.career_items(c))
        group_pool = np.asarray(spec.group_items(grp))
        liked: set[int] = set()
        while len(liked) < spec.likes_per_user:
            if rng.random() < spec.beta:
                pool = career_pool if rng.random() < spec.career_signal else group_pool
            else:
                pool = None
            j = int(rng.integers(spec.n_items)) if pool is None else int(rng.choice(pool))
            liked.add(j)
        edges += [(u, item0 + j, LIKE) for j in sorted(liked)]
        edges.append((u, career0 + c, CHOOSE))

    pool_tag = {}
    for c in range(n_careers):
        for j in spec.career_items(c):
            pool_tag[j] = f"career{c}"
    for grp in (0, 1):
        for j in spec.group_items(grp):
            pool_tag[j] = f"group{grp}"
    vocab = [f"w{k}" for k in range(100)]
    texts = {}
    for j in range(spec.n_items):
        words = [vocab[k] for k in rng.choice(len(vocab), size=3, replace=False)]
        texts[item0 + j] = [pool_tag.get(j, "general")] + words

    groups = {u: grp for u, (_, grp) in enumerate(members)}
    g = build_graph(nodes, edges, ProtectedAttribute("gender", USER, groups), names=names)
    return HinDataset(g, labels_from_graph(g), texts)
