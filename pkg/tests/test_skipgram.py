import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairhin.datasets import generate_synthetic, SyntheticSpec
from fairhin.skipgram import (EmbeddingTable, SkipGramConfig, build_frequency_table, sgns_loss_grad,
                              train_skipgram)
from fairhin.walks import SamplerConfig, builtin_metapaths, generate_corpus
from helpers import central_diff, max_rel_err


def test_counts_small():
    assert build_frequency_table([[7, 3, 7]]).as_dict() == {3: 1, 7: 2}


def test_empty_corpus():
    with pytest.raises(ValueError):
        build_frequency_table([])
    with pytest.raises(ValueError):
        build_frequency_table([[]])


def test_node_outside_graph():
    with pytest.raises(ValueError, match="absent"):
        build_frequency_table([[0, 5]], node_types=np.zeros(3, dtype=int))


@given(st.lists(st.lists(st.integers(0, 30), min_size=1, max_size=15), min_size=1, max_size=20))
def test_counts_match_scan(corpus):
    types = np.arange(31) % 3
    ft = build_frequency_table(corpus, node_types=types)
    scan = {}
    for w in corpus:
        for x in w:
            scan[x] = scan.get(x, 0) + 1
    assert ft.as_dict() == scan
    assert sum(ft.as_dict().values()) == sum(len(w) for w in corpus)
    for t in range(3):
        members = {x: c for x, c in scan.items() if types[x] == t}
        if not members:
            continue
        z = sum(c ** 0.75 for c in members.values())
        dist = ft.negative_distribution(t)
        assert dist.keys() == members.keys()
        for x, c in members.items():
            assert dist[x] == pytest.approx(c ** 0.75 / z, abs=1e-12)


def _sgns_instance(rng, V=9, d=6, k=3):
    W = rng.normal(scale=0.5, size=(V, d))
    C = rng.normal(scale=0.5, size=(V, d))
    targets = rng.choice(np.arange(1, V), size=k + 1, replace=False).astype(np.int64)
    labels = np.array([1.0] + [0.0] * k)
    return W, C, 0, targets, labels


def test_sgns_gradient_matches_finite_differences(rng):
    for _ in range(20):
        W, C, c, t, y = _sgns_instance(rng)
        gc, gt = np.zeros(W.shape[1]), np.zeros((len(t), W.shape[1]))
        sgns_loss_grad(W, C, c, t, y, gc, gt)
        scratch = (np.zeros(W.shape[1]), np.zeros((len(t), W.shape[1])))
        f = lambda: sgns_loss_grad(W, C, c, t, y, *scratch)
        num_w = central_diff(f, W)[c]
        num_c = central_diff(f, C)[t]
        assert max_rel_err(gc, num_w) <= 1e-4
        assert max_rel_err(gt, num_c) <= 1e-4


def test_positive_step_decreases_pair_loss(rng):
    for _ in range(20):
        W, C, c, t, y = _sgns_instance(rng, k=0)
        gc, gt = np.zeros(W.shape[1]), np.zeros((1, W.shape[1]))
        before = sgns_loss_grad(W, C, c, t, y, gc, gt)
        W[c] -= 1e-3 * gc
        C[t[0]] -= 1e-3 * gt[0]
        after = sgns_loss_grad(W, C, c, t, y, np.zeros_like(gc), np.zeros_like(gt))
        assert after < before


@pytest.fixture(scope="module")
def synth_corpus():
    ds = generate_synthetic(SyntheticSpec())
    corpus = generate_corpus(ds.graph, builtin_metapaths(), SamplerConfig(num_walks=1, walk_length=5))
    return ds.graph, corpus[:200]


def test_loss_decreases_over_epochs(synth_corpus):
    g, corpus = synth_corpus
    emb = train_skipgram(corpus, SkipGramConfig(epochs=5, seed=1), node_types=g.type_codes())
    loss = emb.meta["epoch_loss"]
    assert loss[4] < loss[0]


def test_table_covers_vocabulary(synth_corpus):
    g, corpus = synth_corpus
    emb = train_skipgram(corpus, SkipGramConfig(epochs=1), node_types=g.type_codes())
    assert set(emb.ids.tolist()) == {x for w in corpus for x in w}
    assert emb.vectors.shape[1] == 128
    assert np.all(np.isfinite(emb.vectors))


def test_line_order_invariance(synth_corpus):
    g, corpus = synth_corpus
    cfg = SkipGramConfig(dim=16, epochs=2, seed=5)
    a = train_skipgram(corpus, cfg, node_types=g.type_codes())
    b = train_skipgram(corpus[::-1], cfg, node_types=g.type_codes())
    assert np.array_equal(a.vectors, b.vectors)
    c = train_skipgram(corpus, SkipGramConfig(dim=16, epochs=2, seed=6), node_types=g.type_codes())
    assert not np.array_equal(a.vectors, c.vectors)


def test_identical_neighbourhoods_are_similar():
    # users 0 and 1 like exactly the same items; other users like random subsets
    rng = np.random.default_rng(0)
    n_users, n_items = 30, 40
    shared = rng.choice(n_items, 6, replace=False)
    likes = {0: shared, 1: shared}
    for u in range(2, n_users):
        likes[u] = rng.choice(n_items, 6, replace=False)
    item_users = {j: [u for u in range(n_users) if j in likes[u]] for j in range(n_items)}
    wins = 0
    for seed in range(5):
        r = np.random.default_rng(seed)
        corpus = []
        for u in range(n_users):
            for _ in range(10):
                w, cur = [u], u
                for _ in range(8):
                    j = int(r.choice(likes[cur]))
                    cur = int(r.choice(item_users[j]))
                    w += [n_users + j, cur]
                corpus.append(w)
        emb = train_skipgram(corpus, SkipGramConfig(dim=32, epochs=5, seed=seed))
        V = emb.rows(range(n_users))
        V = V / np.linalg.norm(V, axis=1, keepdims=True)
        others = np.random.default_rng(100 + seed).choice(np.arange(2, n_users), 20, replace=False)
        pair = V[0] @ V[1]
        baseline = np.mean([V[0] @ V[o] for o in others] + [V[1] @ V[o] for o in others])
        wins += pair > baseline
    assert wins == 5


def test_non_finite_aborts(synth_corpus):
    g, corpus = synth_corpus
    with pytest.raises(FloatingPointError, match="epoch"):
        train_skipgram(corpus, SkipGramConfig(dim=8, epochs=1, alpha=1e300, min_alpha=1e300))


def test_config_validation():
    with pytest.raises(ValueError):
        SkipGramConfig(dim=0)
    with pytest.raises(ValueError):
        SkipGramConfig(negatives=0)


def test_embedding_table_lookup():
    t = EmbeddingTable(np.array([5, 2]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert t.ids.tolist() == [2, 5]
    assert t[5].tolist() == [1.0, 0.0]
    assert 2 in t and 3 not in t
    with pytest.raises(KeyError):
        t[3]
    with pytest.raises(ValueError):
        EmbeddingTable(np.array([1, 1]), np.zeros((2, 2)))
