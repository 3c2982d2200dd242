"""Shared oracles for the test suite."""
import numpy as np

from fairhin.graph import ProtectedAttribute, Relation, build_graph

LIKE = Relation("like", "user", "item")
CHOOSE = Relation("choose", "user", "career")


def random_hin(rng, n_users=12, n_items=8, n_careers=3, p_like=0.3, choose=True):
    """Users, items and careers with random like edges and one career per user."""
    nodes = [(i, "user") for i in range(n_users)]
    nodes += [(n_users + j, "item") for j in range(n_items)]
    nodes += [(n_users + n_items + c, "career") for c in range(n_careers)]
    edges = []
    for u in range(n_users):
        for j in range(n_items):
            if rng.random() < p_like:
                edges.append((u, n_users + j, LIKE))
        if choose:
            edges.append((u, n_users + n_items + int(rng.integers(n_careers)), CHOOSE))
    groups = {u: int(rng.integers(2)) for u in range(n_users)}
    # keep both groups present
    groups[0], groups[1] = 0, 1
    return build_graph(nodes, edges, ProtectedAttribute("gender", "user", groups))


def central_diff(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def max_rel_err(analytic, numeric, floor=1e-8):
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
