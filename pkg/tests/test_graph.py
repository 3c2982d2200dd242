import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairhin.graph import (GraphError, ProtectedAttribute, Relation, build_graph, check_single_edge,
                           neighbors_by_type, neighbors_by_type_and_group)
from helpers import CHOOSE, LIKE, random_hin


def tiny():
    nodes = [(0, "user"), (1, "user"), (2, "item")]
    edges = [(0, 2, LIKE), (1, 2, LIKE)]
    return build_graph(nodes, edges, ProtectedAttribute("gender", "user", {0: 0, 1: 1}))


def test_item_sees_both_users():
    g = tiny()
    assert neighbors_by_type(g, 2, "user").tolist() == [0, 1]
    assert neighbors_by_type_and_group(g, 2, "user", 0).tolist() == [0]
    assert neighbors_by_type_and_group(g, 2, "user", 1).tolist() == [1]


def test_empty_edge_list():
    g = build_graph([(0, "user"), (1, "item")], [], ProtectedAttribute("a", "user", {0: 0}))
    assert g.num_edges == 0
    assert len(g.neighbors(0, "item")) == 0
    assert len(g.neighbors(1, "user")) == 0
    assert len(g.neighbors_in_group(1, "user", 0)) == 0


def test_star_graph():
    nodes = [(0, "user")] + [(i, "item") for i in range(1, 5)]
    g = build_graph(nodes, [(0, i, LIKE) for i in range(1, 5)],
                    ProtectedAttribute("a", "user", {0: 0}))
    assert g.neighbors(0, "item").tolist() == [1, 2, 3, 4]
    assert g.neighbors(0, "career").tolist() == []


def test_career_group_query():
    nodes = [(i, "user") for i in range(4)] + [(4, "career")]
    groups = {0: 1, 1: 1, 2: 1, 3: 0}
    g = build_graph(nodes, [(u, 4, CHOOSE) for u in range(4)],
                    ProtectedAttribute("gender", "user", groups))
    assert g.neighbors_in_group(4, "user", 1).tolist() == [0, 1, 2]
    assert g.neighbors_in_group(4, "user", 0).tolist() == [3]


def test_group_query_rejects_unprotected_type():
    with pytest.raises(GraphError):
        tiny().neighbors_in_group(0, "item", 0)


def test_unknown_node():
    with pytest.raises(GraphError):
        tiny().neighbors(7, "user")


@pytest.mark.parametrize("nodes,edges,groups", [
    ([(0, "user"), (1, "item")], [(1, 0, LIKE)], {0: 0}),          # endpoint types swapped
    ([(0, "user"), (1, "item")], [], {}),                          # missing label
    ([(0, "user"), (0, "item")], [], {0: 0}),                      # duplicate id
    ([(0, "user"), (1, "item")], [], {0: 0, 1: 1}),                # label on an item
    ([(0, "user"), (2, "item")], [], {0: 0}),                      # non-dense ids
    ([(0, "user"), (1, "item")], [], {0: 2}),                      # non-binary label
])
def test_build_graph_rejects(nodes, edges, groups):
    with pytest.raises(GraphError):
        build_graph(nodes, edges, ProtectedAttribute("a", "user", groups))


def test_advantaged_is_larger_group_with_tie_to_zero():
    nodes = [(i, "user") for i in range(3)]
    g = build_graph(nodes, [], ProtectedAttribute("a", "user", {0: 1, 1: 1, 2: 0}))
    assert (g.advantaged, g.disadvantaged) == (1, 0)
    g = build_graph(nodes[:2], [], ProtectedAttribute("a", "user", {0: 1, 1: 0}))
    assert g.advantaged == 0


def test_single_career_check():
    nodes = [(0, "user"), (1, "career"), (2, "career")]
    g = build_graph(nodes, [(0, 1, CHOOSE), (0, 2, CHOOSE)], ProtectedAttribute("a", "user", {0: 0}))
    with pytest.raises(GraphError, match="more than one"):
        check_single_edge(g, "choose")


def test_drop_edges_keeps_ids(rng):
    g = random_hin(rng)
    h = g.drop_edges(lambda u, v, rel: rel.name == "like")
    assert h.num_nodes == g.num_nodes
    assert [h.name_of(v) for v in range(h.num_nodes)] == [g.name_of(v) for v in range(g.num_nodes)]
    assert all(rel.name == "like" for _, _, rel in h.edges())


@given(st.integers(0, 2**32 - 1))
def test_index_matches_edge_scan(seed):
    rng = np.random.default_rng(seed)
    g = random_hin(rng, n_users=int(rng.integers(2, 25)), n_items=int(rng.integers(1, 20)),
                   n_careers=int(rng.integers(1, 6)), p_like=float(rng.random()))
    edges = list(g.edges())
    for v in range(g.num_nodes):
        for t in g.node_types:
            scan = sorted([b for a, b, _ in edges if a == v and g.type_of(b) == t]
                          + [a for a, b, _ in edges if b == v and g.type_of(a) == t])
            assert g.neighbors(v, t).tolist() == scan
        full = g.neighbors(v, "user").tolist()
        g0 = g.neighbors_in_group(v, "user", 0).tolist()
        g1 = g.neighbors_in_group(v, "user", 1).tolist()
        assert sorted(g0 + g1) == full
        assert not set(g0) & set(g1)
        assert g0 == [u for u in full if g.group_of(u) == 0]


def test_build_is_pure(rng):
    state = rng.bit_generator.state
    a = random_hin(rng)
    rng.bit_generator.state = state
    b = random_hin(rng)
    for v in range(a.num_nodes):
        for t in a.node_types:
            assert np.array_equal(a.neighbors(v, t), b.neighbors(v, t))
    assert list(a.edges()) == list(b.edges())
