"""Typed heterogeneous graph with type- and group-refined adjacency indexes."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_EMPTY = np.zeros(0, dtype=np.int64)
_EMPTY.setflags(write=False)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Relation:
    name: str
    src_type: str
    dst_type: str


@dataclass(frozen=True)
class ProtectedAttribute:
    """Binary attribute defined on exactly one node type.

    ``groups`` maps node id to group label 0 or 1.
    """

    name: str
    node_type: str
    groups: Mapping[int, int] = field(default_factory=dict)


class HinGraph:
    """Immutable heterogeneous information network.

    Edges are undirected: every relation is also traversable in reverse.
    Neighbour lists are sorted ascending by node id and kept with
    multiplicity, so they are exact inversions of the edge list.
    """

    def __init__(self, node_types, type_names, edges, edge_rel, relations, attr, names):
        self._node_type = node_types  # int code per node
        self._type_names = type_names
        self._type_code = {t: i for i, t in enumerate(type_names)}
        self._edges = edges
        self._edge_rel = edge_rel
        self.relations: dict[str, Relation] = relations
        self.attr: ProtectedAttribute = attr
        self._names = names
        self._name_to_id = {n: i for i, n in enumerate(names)}
        if len(self._name_to_id) != len(names):
            raise GraphError("duplicate node name")

        buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        for u, v in edges:
            buckets[(u, int(node_types[v]))].append(v)
            buckets[(v, int(node_types[u]))].append(u)
        self._adj = {}
        for key, lst in buckets.items():
            arr = np.sort(np.asarray(lst, dtype=np.int64))
            arr.setflags(write=False)
            self._adj[key] = arr

        self._protected_code = self._type_code.get(attr.node_type, -1)
        grp = np.full(len(node_types), -1, dtype=np.int64)
        for v, g in attr.groups.items():
            grp[v] = g
        grp.setflags(write=False)
        self._group = grp
        self._group_adj = {}
        if self._protected_code >= 0:
            for (v, t), arr in self._adj.items():
                if t != self._protected_code:
                    continue
                gs = grp[arr]
                for g in (0, 1):
                    sub = arr[gs == g]
                    sub.setflags(write=False)
                    self._group_adj[(v, g)] = sub
        sizes = np.bincount(grp[grp >= 0], minlength=2)
        self.group_sizes: tuple[int, int] = (int(sizes[0]), int(sizes[1]))
        # ties resolve to group 0 as advantaged
        self.advantaged: int = 0 if sizes[0] >= sizes[1] else 1

    # -- basic accessors -------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return len(self._node_type)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    @property
    def node_types(self) -> list[str]:
        return list(self._type_names)

    @property
    def disadvantaged(self) -> int:
        return 1 - self.advantaged

    @property
    def protected_type(self) -> str:
        return self.attr.node_type

    def edges(self) -> Iterable[tuple[int, int, Relation]]:
        for (u, v), r in zip(self._edges, self._edge_rel):
            yield int(u), int(v), self.relations[r]

    def edge_array(self) -> np.ndarray:
        return np.asarray(self._edges, dtype=np.int64).reshape(-1, 2)

    def type_of(self, v: int) -> str:
        self._check(v)
        return self._type_names[self._node_type[v]]

    def name_of(self, v: int) -> str:
        self._check(v)
        return self._names[v]

    def id_of(self, name: str) -> int:
        try:
            return self._name_to_id[name]
        except KeyError:
            raise GraphError(f"unknown node {name!r}") from None

    def has_name(self, name: str) -> bool:
        return name in self._name_to_id

    def group_of(self, v: int) -> int | None:
        self._check(v)
        g = int(self._group[v])
        return None if g < 0 else g

    def group_array(self) -> np.ndarray:
        """Group label per node id, -1 for nodes outside the protected type."""
        return self._group

    def nodes_of_type(self, t: str) -> np.ndarray:
        code = self._type_code.get(t)
        if code is None:
            return _EMPTY
        return np.flatnonzero(self._node_type == code)

    def type_codes(self) -> np.ndarray:
        return self._node_type

    def type_index(self, t: str) -> int:
        try:
            return self._type_code[t]
        except KeyError:
            raise GraphError(f"unknown node type {t!r}") from None

    def _check(self, v: int) -> None:
        if not 0 <= v < len(self._node_type):
            raise GraphError(f"unknown node id {v}")

    # -- neighbour queries -----------------------------------------------
    def neighbors(self, v: int, t: str) -> np.ndarray:
        """Neighbours of ``v`` with type ``t``, ascending by id."""
        self._check(v)
        code = self._type_code.get(t)
        if code is None:
            return _EMPTY
        return self._adj.get((v, code), _EMPTY)

    def neighbors_in_group(self, v: int, t: str, group: int) -> np.ndarray:
        self._check(v)
        if t != self.attr.node_type:
            raise GraphError(f"{t!r} is not the protected node type {self.attr.node_type!r}")
        if group not in (0, 1):
            raise GraphError(f"group must be 0 or 1, got {group}")
        return self._group_adj.get((v, group), _EMPTY)

    # -- derived graphs --------------------------------------------------
    def drop_edges(self, keep) -> "HinGraph":
        """Copy of this graph keeping only the edges for which ``keep(u, v, rel)`` holds.

        The node set, names, ids, and group labels are unchanged.
        """
        nodes = [(i, self._type_names[c]) for i, c in enumerate(self._node_type)]
        edges = [(u, v, rel) for u, v, rel in self.edges() if keep(u, v, rel)]
        return build_graph(nodes, edges, self.attr, names=self._names,
                           relations=self.relations.values())


def neighbors_by_type(g: HinGraph, v: int, t: str) -> np.ndarray:
    return g.neighbors(v, t)


def neighbors_by_type_and_group(g: HinGraph, v: int, t: str, grp: int) -> np.ndarray:
    return g.neighbors_in_group(v, t, grp)


def build_graph(
    nodes: Sequence[tuple[int, str]],
    edges: Iterable[tuple[int, int, Relation]],
    attr: ProtectedAttribute,
    names: Sequence[str] | None = None,
    relations: Iterable[Relation] = (),
) -> HinGraph:
    """Validate inputs and construct a :class:`HinGraph`.

    ``nodes`` must use dense ids ``0..n-1`` (any order). ``names`` are the
    original external identifiers; they default to ``str(id)``.
    Relations used by edges are collected automatically; ``relations`` may
    declare extra ones that have no edges.
    """
    n = len(nodes)
    type_of = [None] * n
    for v, t in nodes:
        if not 0 <= v < n:
            raise GraphError(f"node id {v} outside dense range 0..{n - 1}")
        if type_of[v] is not None:
            raise GraphError(f"duplicate node id {v}")
        type_of[v] = t
    type_names = sorted(set(type_of))
    code = {t: i for i, t in enumerate(type_names)}
    node_types = np.array([code[t] for t in type_of], dtype=np.int64)
    node_types.setflags(write=False)

    rels: dict[str, Relation] = {}
    for r in relations:
        rels[r.name] = r
    edge_list = []
    edge_rel = []
    for u, v, rel in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge ({u}, {v}) references an unknown node")
        known = rels.setdefault(rel.name, rel)
        if known != rel:
            raise GraphError(f"relation {rel.name!r} declared twice with different types")
        if type_of[u] != rel.src_type or type_of[v] != rel.dst_type:
            raise GraphError(
                f"edge ({u}, {v}) of relation {rel.name!r} has endpoint types "
                f"({type_of[u]}, {type_of[v]}), expected ({rel.src_type}, {rel.dst_type})"
            )
        edge_list.append((u, v))
        edge_rel.append(rel.name)

    groups = {}
    for v, g in attr.groups.items():
        if not 0 <= v < n:
            raise GraphError(f"group label for unknown node {v}")
        if type_of[v] != attr.node_type:
            raise GraphError(f"node {v} of type {type_of[v]!r} carries a group label")
        if g not in (0, 1):
            raise GraphError(f"group label must be 0 or 1, got {g!r} for node {v}")
        groups[int(v)] = int(g)
    for v, t in enumerate(type_of):
        if t == attr.node_type and v not in groups:
            raise GraphError(f"node {v} of protected type {t!r} has no group label")
    attr = ProtectedAttribute(attr.name, attr.node_type, groups)

    if names is None:
        names = [str(i) for i in range(n)]
    elif len(names) != n:
        raise GraphError("names must have one entry per node")
    return HinGraph(node_types, type_names, edge_list, edge_rel, rels, attr, list(names))


def check_single_edge(g: HinGraph, relation: str) -> None:
    """Raise if any protected-type node has more than one ``relation`` edge."""
    counts: dict[int, int] = defaultdict(int)
    for u, v, rel in g.edges():
        if rel.name != relation:
            continue
        for w in (u, v):
            if g.group_of(w) is not None:
                counts[w] += 1
    bad = sorted(w for w, c in counts.items() if c > 1)
    if bad:
        shown = ", ".join(g.name_of(w) for w in bad[:5])
        raise GraphError(f"{len(bad)} node(s) have more than one {relation!r} edge: {shown}")
