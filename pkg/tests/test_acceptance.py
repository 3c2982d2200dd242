"""Acceptance suite: one test per criterion, each printing a PASS/FAIL/SKIP line.

Run alone with ``pytest tests/test_acceptance.py -s``; the full end-to-end
check (criterion 7) takes several minutes.
"""
import time
from contextlib import contextmanager

import numpy as np
import pytest

from fairhin.datasets import default_movielens_dir, load_movielens
from fairhin.gnn import FairLossConfig, loss_dp
from fairhin.graph import ProtectedAttribute, build_graph
from fairhin.metrics import diff_dp, diff_eo, dp_terms_records, mrr
from fairhin.pipeline import PipelineConfig, Runner
from fairhin.predictor import init_params, mlp_loss_and_grads
from fairhin.projection import debias, debias_all
from fairhin.selection import EvalReport, gnn_baseline_for_fairness, pareto_frontier, threshold_select
from fairhin.skipgram import EmbeddingTable, sgns_loss_grad
from fairhin.walks import sample_steps, transition_fair

from helpers import CHOOSE, LIKE, central_diff, max_rel_err, random_hin, total_variation
from test_gnn import gradient_instance
from test_metrics import dp_oracle, eo_oracle, mrr_oracle, random_records


@pytest.fixture
def criterion(capsys):
    """``with criterion(n, title) as note:`` prints one result line; ``note`` adds detail."""

    @contextmanager
    def run(number, title):
        details = []
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield details.append
            status = "PASS"
        except pytest.skip.Exception:
            status = "SKIP"
            raise
        finally:
            elapsed = time.perf_counter() - start
            extra = f" ({'; '.join(details)})" if details else ""
            with capsys.disabled():
                print(f"\n[criterion {number}] {status}: {title} [{elapsed:.1f}s]{extra}")
    return run


# -- 1. sampler kernel fidelity -------------------------------------------------------

def hand_hin():
    """Five users, two items, three careers; u4 likes i6 twice."""
    nodes = [(u, "user") for u in range(5)] + [(5, "item"), (6, "item")]
    nodes += [(7, "career"), (8, "career"), (9, "career")]
    likes = [(0, 5), (0, 6), (1, 5), (2, 6), (3, 5), (3, 6), (4, 6), (4, 6)]
    chooses = [(0, 7), (1, 7), (3, 7), (2, 8), (4, 8), (1, 9), (2, 9)]
    edges = [(u, v, LIKE) for u, v in likes] + [(u, v, CHOOSE) for u, v in chooses]
    groups = {0: 0, 1: 0, 2: 0, 3: 1, 4: 1}
    return build_graph(nodes, edges, ProtectedAttribute("gender", "user", groups))


def hand_kernels(r):
    """Step distributions worked out by hand for :func:`hand_hin`.

    Keys are (node, next type, mode). Group 1 is the smaller group, so it
    takes mass r/(1+r) at a career whose users span both groups.
    """
    third = 1 / 3
    k = {
        (0, "item", "standard"): {5: 0.5, 6: 0.5}, (0, "career", "standard"): {7: 1.0},
        (1, "item", "standard"): {5: 1.0}, (1, "career", "standard"): {7: 0.5, 9: 0.5},
        (2, "item", "standard"): {6: 1.0}, (2, "career", "standard"): {8: 0.5, 9: 0.5},
        (3, "item", "standard"): {5: 0.5, 6: 0.5}, (3, "career", "standard"): {7: 1.0},
        (4, "item", "standard"): {6: 1.0}, (4, "career", "standard"): {8: 1.0},
        (5, "user", "standard"): {0: third, 1: third, 3: third},
        (6, "user", "standard"): {0: 0.2, 2: 0.2, 3: 0.2, 4: 0.4},
        (7, "user", "standard"): {0: third, 1: third, 3: third},
        (8, "user", "standard"): {2: 0.5, 4: 0.5},
        (9, "user", "standard"): {1: 0.5, 2: 0.5},
        (7, "user", "fair"): {0: 0.5 / (1 + r), 1: 0.5 / (1 + r), 3: r / (1 + r)},
        (8, "user", "fair"): {2: 1 / (1 + r), 4: r / (1 + r)},
        (9, "user", "fair"): {1: 0.5, 2: 0.5},
    }
    return k


def test_criterion_1_sampler_fidelity(criterion):
    with criterion(1, "sampled steps match the analytic kernels within TV 0.01") as note:
        start = time.perf_counter()
        g = hand_hin()
        worst = 0.0
        for r in (1.0, 3.0):
            for (v, t, mode), expect in hand_kernels(r).items():
                if mode == "standard" and r != 1.0:
                    continue
                steps = sample_steps(g, v, t, 100_000, seed=v, mode=mode, r=r)
                ids, counts = np.unique(steps, return_counts=True)
                empirical = {int(i): c / len(steps) for i, c in zip(ids, counts)}
                worst = max(worst, total_variation(empirical, expect))
        elapsed = time.perf_counter() - start
        note(f"max TV {worst:.4f}")
        assert worst < 0.01
        assert elapsed < 10


# -- 2. group-parity point --------------------------------------------------------------

def test_criterion_2_group_parity(criterion):
    with criterion(2, "fair kernel group masses are exact") as note:
        rng = np.random.default_rng(2)
        checked, worst = 0, 0.0
        for _ in range(200):
            g = random_hin(rng, n_users=int(rng.integers(4, 30)), n_items=4,
                           n_careers=int(rng.integers(1, 6)), p_like=0.2)
            dis = g.disadvantaged
            for c in g.nodes_of_type("career"):
                users = g.neighbors(int(c), "user")
                grp = g.group_array()[users]
                if not (np.any(grp == 0) and np.any(grp == 1)):
                    continue
                checked += 1
                for r in range(1, 11):
                    dist = transition_fair(g, int(c), float(r))
                    mass_dis = sum(p for u, p in dist.items() if g.group_of(u) == dis)
                    worst = max(worst, abs(mass_dis - r / (1 + r)), abs(sum(dist.values()) - 1))
                    if r == 1:
                        worst = max(worst, abs(mass_dis - 0.5))
        note(f"{checked} neighbourhoods, max error {worst:.1e}")
        assert checked >= 200
        assert worst <= 1e-12


# -- 3. projection correctness ------------------------------------------------------------

def test_criterion_3_projection(criterion):
    with criterion(3, "projection is orthogonal, idempotent, linear and collapses a planted offset") as note:
        rng = np.random.default_rng(3)
        n, d = 1000, 32
        groups = {u: int(rng.integers(2)) for u in range(n)}
        X = rng.normal(size=(n, d))
        emb = EmbeddingTable(np.arange(n), X)
        out = debias_all(emb, groups)
        vb = out.meta["bias_direction"]
        ortho = float(np.max(np.abs(out.vectors @ vb)))
        again = debias(out.vectors, vb)
        idem = float(np.max(np.abs(again - out.vectors)))
        a, b = rng.normal(size=2)
        Y = rng.normal(size=(n, d))
        lin = float(np.max(np.abs(debias(a * X + b * Y, vb) - (a * debias(X, vb) + b * debias(Y, vb)))))

        axis = rng.normal(size=d)
        axis /= np.linalg.norm(axis)
        sign = np.array([1.0 if groups[u] == 0 else -1.0 for u in range(n)])
        planted = EmbeddingTable(np.arange(n), rng.normal(size=(n, d)) + 5.0 * sign[:, None] * axis)
        col = debias_all(planted, groups).vectors
        g0, g1 = sign > 0, sign < 0
        gap = abs(float((col[g0].mean(axis=0) - col[g1].mean(axis=0)) @ axis))
        note(f"orth {ortho:.1e}, idem {idem:.1e}, lin {lin:.1e}, planted gap {gap:.1e}")
        assert ortho <= 1e-9 and idem <= 1e-9 and lin <= 1e-9
        assert gap <= 1e-6


# -- 4. gradient checks ------------------------------------------------------------------

def test_criterion_4_gradients(criterion):
    with criterion(4, "analytic gradients match central differences (rel err <= 1e-4)") as note:
        start = time.perf_counter()
        rng = np.random.default_rng(4)
        worst = {}
        configs = {
            "acc": FairLossConfig("none"), "dp": FairLossConfig("dp", lambda_dp=1.0),
            "eo": FairLossConfig("eo", lambda_eo=1.0), "acc+10dp": FairLossConfig("dp", lambda_dp=10.0),
            "acc+50eo": FairLossConfig("eo", lambda_eo=50.0),
        }
        for name, fair in configs.items():
            worst[name] = max(gradient_instance(rng, fair) for _ in range(20))

        w = 0.0
        for _ in range(20):
            V, d, k = 9, 6, 3
            W = rng.normal(scale=0.5, size=(V, d))
            C = rng.normal(scale=0.5, size=(V, d))
            t = rng.choice(np.arange(1, V), size=k + 1, replace=False).astype(np.int64)
            y = np.array([1.0] + [0.0] * k)
            gc, gt = np.zeros(d), np.zeros((k + 1, d))
            sgns_loss_grad(W, C, 0, t, y, gc, gt)
            scratch = (np.zeros(d), np.zeros((k + 1, d)))
            f = lambda: sgns_loss_grad(W, C, 0, t, y, *scratch)
            w = max(w, max_rel_err(gc, central_diff(f, W)[0]), max_rel_err(gt, central_diff(f, C)[t]))
        worst["skip-gram"] = w

        w = 0.0
        for _ in range(20):
            params = init_params(4, 5, seed=int(rng.integers(1000)))
            params["b1"] = rng.normal(scale=0.3, size=5)
            E, U, y = rng.normal(size=(3, 4)), rng.normal(size=(6, 4)), rng.integers(0, 3, 6)
            _, grads = mlp_loss_and_grads(params, E, U, y)
            for key, P in params.items():
                num = central_diff(lambda: mlp_loss_and_grads(params, E, U, y)[0], P)
                w = max(w, max_rel_err(grads[key], num))
        worst["mlp"] = w
        elapsed = time.perf_counter() - start
        note(", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
        assert max(worst.values()) <= 1e-4
        assert elapsed < 60


# -- 5. counting / soft bridge -------------------------------------------------------------

def test_criterion_5_soft_bridge(criterion):
    with criterion(5, "one-hot loss_dp equals the squared counting gaps") as note:
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            records = random_records(rng)
            classes, terms = dp_terms_records(records)
            idx = {c: i for i, c in enumerate(classes)}
            onehot = np.zeros((len(records), len(classes)))
            onehot[np.arange(len(records)), [idx[r.top1] for r in records]] = 1.0
            groups = np.array([r.group for r in records])
            worst = max(worst, abs(loss_dp(onehot, groups) - float(np.sum(terms ** 2))))
        note(f"max error {worst:.1e}")
        assert worst <= 1e-12


# -- 6. metric oracles ----------------------------------------------------------------------

def frontier_all_pairs(points):
    """Unique points not dominated by any other, by vectorised all-pairs comparison."""
    P = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    ge = P[None, :, 0] >= P[:, None, 0]
    le = P[None, :, 1] <= P[:, None, 1]
    strict = (P[None, :, 0] > P[:, None, 0]) | (P[None, :, 1] < P[:, None, 1])
    dominated = np.any(ge & le & strict, axis=1)
    return sorted(map(tuple, P[~dominated].tolist()))


def test_criterion_6_metric_oracles(criterion):
    with criterion(6, "metrics and frontier agree with brute force on 1,000 inputs each") as note:
        rng = np.random.default_rng(6)
        mismatches = 0
        for _ in range(1000):
            records = random_records(rng)
            mismatches += mrr(records) != pytest.approx(float(mrr_oracle(records)), rel=1e-12)
            mismatches += diff_dp(records) != pytest.approx(float(dp_oracle(records)), abs=1e-12)
            mismatches += diff_eo(records) != pytest.approx(float(eo_oracle(records)), abs=1e-12)
        front_bad = 0
        for i in range(1000):
            n = int(rng.integers(1, 1001))
            # alternate coarse grids (ties, duplicates) with continuous values
            pts = rng.integers(0, 10, (n, 2)) / 10.0 if i % 2 else rng.random((n, 2))
            pts = [tuple(p) for p in pts.tolist()]
            front_bad += sorted(pareto_frontier(pts)) != frontier_all_pairs(pts)
        note(f"metric mismatches {mismatches}, frontier mismatches {front_bad}")
        assert mismatches == 0 and front_bad == 0


# -- 7. end-to-end debiasing direction ---------------------------------------------------------

def _mean(reports, key):
    return float(np.mean([getattr(r, key) for r in reports]))


def test_criterion_7_end_to_end(criterion, tmp_path_factory):
    with criterion(7, "debiasing methods move diff_dp in the right direction on synthetic data") as note:
        start = time.perf_counter()
        runner = Runner(PipelineConfig(out=tmp_path_factory.mktemp("e2e")))

        base = runner.run("gnn-dp", {"lambda_dp": 0})
        dp0, mrr0 = _mean(base, "diff_dp"), _mean(base, "mrr")
        best = None
        for lam in range(10, 101, 10):
            reps = runner.run("gnn-dp", {"lambda_dp": lam})
            dp, m = _mean(reps, "diff_dp"), _mean(reps, "mrr")
            if (mrr0 - m) / mrr0 <= 0.30 and (best is None or dp < best[1]):
                best = (lam, dp, m)
        ok_a = best is not None and best[1] <= 0.5 * dp0
        note(f"a: lambda=0 dp {dp0:.3f} mrr {mrr0:.3f}; best lambda {best and best[0]} "
             f"dp {best and round(best[1], 3)} mrr {best and round(best[2], 3)}")

        fair = {r: _mean(runner.run("m2v+fair", {"r": r}), "diff_dp") for r in range(1, 11)}
        r_best = min(range(2, 11), key=fair.get)
        ok_b = fair[r_best] < fair[1]
        note(f"b: r=1 dp {fair[1]:.3f}; best r={r_best} dp {fair[r_best]:.3f}")

        m2v = _mean(runner.run("m2v"), "diff_dp")
        proj = _mean(runner.run("m2v+proj"), "diff_dp")
        ok_c = proj < m2v
        note(f"c: m2v dp {m2v:.3f}; m2v+proj dp {proj:.3f}")
        elapsed = time.perf_counter() - start
        assert ok_a and ok_b and ok_c
        assert elapsed < 20 * 60


# -- 8. MovieLens-1M sanity ------------------------------------------------------------------

def test_criterion_8_movielens(criterion, tmp_path_factory):
    with criterion(8, "MovieLens-1M preprocessing and MRR ranges") as note:
        path = default_movielens_dir()
        if not (path / "ratings.dat").exists():
            note(f"no data at {path}")
            pytest.skip("MovieLens-1M not available locally")
        start = time.perf_counter()
        ds = load_movielens(path)
        g = ds.graph
        counts = (len(ds.users), len(g.nodes_of_type("item")), len(ds.careers),
                  g.group_sizes[0], g.group_sizes[1])
        note(f"users/items/careers/male/female = {counts}")
        runner = Runner(PipelineConfig(out=tmp_path_factory.mktemp("ml"), seeds=(0,)), ds)
        m2v = _mean(runner.run("m2v"), "mrr")
        gnn = _mean(runner.run("gnn"), "mrr")
        note(f"m2v mrr {m2v:.4f}, gnn mrr {gnn:.4f}")
        assert counts == (4920, 3677, 14, 3558, 1362)
        assert 0.30 <= m2v <= 0.45 and 0.30 <= gnn <= 0.45
        assert time.perf_counter() - start <= 30 * 60


# -- 9. threshold protocol ---------------------------------------------------------------------

def test_criterion_9_threshold_protocol(criterion):
    with criterion(9, "LF/MF/HF thresholds and empty cells") as note:
        def rep(method, params, seed, dp, m):
            return EvalReport(method, params, seed, 0, m, dp, 0.1)

        reports = [rep("gnn", "", s, 0.4 + 0.02 * (s - 2), 0.50) for s in range(5)]
        # per-method mean gaps: full qualifies everywhere, mid down to MF, low only at LF, none nowhere
        layout = {"full": [(0.15, 0.40), (0.35, 0.45)], "mid": [(0.28, 0.42), (0.39, 0.48)],
                  "low": [(0.38, 0.47)], "none": [(0.55, 0.60)]}
        for method, cells in layout.items():
            for k, (dp, m) in enumerate(cells):
                reports += [rep(method, f"k={k}", s, dp, m) for s in range(5)]
        base = gnn_baseline_for_fairness(reports)
        table = threshold_select(reports, base)
        assert base == pytest.approx(0.4)
        assert table.thresholds["LF"] == pytest.approx(base)
        assert table.thresholds["MF"] == pytest.approx(0.75 * base)
        assert table.thresholds["HF"] == pytest.approx(0.5 * base)
        empty = {(m, lvl) for m, row in table.cells.items() for lvl, v in row.items() if v is None}
        # independent expectation from the layout
        expect_empty = set()
        for method, cells in {"gnn": [(0.4, 0.5)], **layout}.items():
            for lvl, thr in table.thresholds.items():
                ok = [m for dp, m in cells if dp <= thr]
                if not ok:
                    expect_empty.add((method, lvl))
                else:
                    assert table.cells[method][lvl] == pytest.approx(max(ok))
        note(f"empty cells {sorted(empty)}")
        assert empty == expect_empty
        assert {lvl for m, lvl in empty if m == "low"} == {"MF", "HF"}
        assert {lvl for m, lvl in empty if m == "none"} == {"LF", "MF", "HF"}
        assert table.cells["full"]["HF"] == pytest.approx(0.40)
        assert table.cells["gnn"]["LF"] == pytest.approx(0.50)
