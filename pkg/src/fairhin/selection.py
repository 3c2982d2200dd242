"""Report records, Pareto frontiers and fairness-threshold model selection."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

LEVELS = (("LF", 1.0), ("MF", 0.75), ("HF", 0.5))
METRICS = ("diff_dp", "diff_eo")


@dataclass(frozen=True)
class EvalReport:
    method: str
    params: str  # canonical "k=v;k=v" string
    seed: int
    split: int
    mrr: float
    diff_dp: float
    diff_eo: float

    def __post_init__(self):
        for name in ("mrr", "diff_dp", "diff_eo"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        if not 0 < self.mrr <= 1:
            raise ValueError(f"MRR {self.mrr} outside (0, 1]")


def format_params(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in sorted(params))


def parse_params(text: str) -> dict[str, str]:
    if not text:
        return {}
    return dict(kv.split("=", 1) for kv in text.split(";"))


def pareto_frontier(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Non-dominated (mrr, diff) points; higher MRR and lower diff are better.

    Identical points collapse to one survivor. Survivors keep input order.
    """
    order = sorted(range(len(points)), key=lambda i: (-points[i][0], points[i][1], i))
    keep = []
    best_diff = math.inf
    for i in order:
        if points[i][1] < best_diff:
            keep.append(i)
            best_diff = points[i][1]
    return [tuple(points[i]) for i in sorted(keep)]


def aggregate(reports: Iterable[EvalReport]) -> dict[tuple[str, str], dict[str, float]]:
    """Mean of each metric per (method, params) over seeds and splits."""
    cells: dict[tuple[str, str], list[EvalReport]] = defaultdict(list)
    for r in reports:
        cells[(r.method, r.params)].append(r)
    out = {}
    for key, rs in sorted(cells.items()):
        out[key] = {m: sum(getattr(r, m) for r in rs) / len(rs) for m in ("mrr",) + METRICS}
        out[key]["runs"] = len(rs)
    return out


def gnn_baseline_for_fairness(reports: Iterable[EvalReport], metric: str = "diff_dp",
                              method: str = "gnn") -> float:
    """Mean fairness gap of the plain (unpenalised) GNN runs."""
    vals = [getattr(r, metric) for r in reports if r.method == method]
    if not vals:
        raise ValueError(f"no baseline runs for method {method!r}")
    return sum(vals) / len(vals)


@dataclass
class ThresholdTable:
    metric: str
    baseline: float
    thresholds: dict[str, float]
    cells: dict[str, dict[str, float | None]] = field(default_factory=dict)
    chosen: dict[str, dict[str, str | None]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_text(self) -> str:
        prefix = self.metric.replace("diff_", "")
        head = ["method"] + [f"{prefix}_{lvl}" for lvl, _ in LEVELS]
        rows = [head]
        for method, row in self.cells.items():
            rows.append([method] + ["--" if row[l] is None else f"{row[l]:.4f}" for l, _ in LEVELS])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        thr = ", ".join(f"{l}={v:.4f}" for l, v in self.thresholds.items())
        return "\n".join([f"# {self.metric} thresholds: {thr}"] + lines) + "\n"


def threshold_select(reports: Sequence[EvalReport], baseline_fairness: float,
                     metric: str = "diff_dp") -> ThresholdTable:
    """Best mean MRR per method among configurations whose mean gap meets each threshold.

    Thresholds are 100%, 75% and 50% of ``baseline_fairness``. A cell is
    ``None`` when no configuration of that method qualifies.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown fairness metric {metric!r}")
    thresholds = {lvl: frac * baseline_fairness for lvl, frac in LEVELS}
    agg = aggregate(reports)
    table = ThresholdTable(metric, baseline_fairness, thresholds)
    methods = list(dict.fromkeys(r.method for r in reports))
    for method in methods:
        table.cells[method] = {}
        table.chosen[method] = {}
        for lvl, thr in thresholds.items():
            ok = [(v["mrr"], p) for (m, p), v in agg.items() if m == method and v[metric] <= thr]
            if ok:
                best = max(ok, key=lambda t: (t[0], t[1]))
                table.cells[method][lvl] = best[0]
                table.chosen[method][lvl] = best[1]
            else:
                table.cells[method][lvl] = None
                table.chosen[method][lvl] = None
    return table
