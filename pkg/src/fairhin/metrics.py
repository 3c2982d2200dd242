"""Ranking accuracy and counting-based group fairness metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionRecord:
    user: Hashable
    group: int
    truth: Hashable
    ranking: tuple  # careers, best first

    @property
    def top1(self):
        return self.ranking[0]

    @property
    def rank(self) -> int:
        return self.ranking.index(self.truth) + 1


def _check_groups(groups: np.ndarray) -> None:
    if not (np.any(groups == 0) and np.any(groups == 1)):
        raise ValueError("both protected groups must be present")


def _encode(records: Sequence[PredictionRecord]):
    if not records:
        raise ValueError("no prediction records")
    classes = sorted({c for r in records for c in r.ranking} | {r.truth for r in records})
    idx = {c: i for i, c in enumerate(classes)}
    pred = np.array([idx[r.top1] for r in records])
    truth = np.array([idx[r.truth] for r in records])
    groups = np.array([r.group for r in records])
    return pred, truth, groups, len(classes)


def mrr(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise ValueError("no prediction records")
    return mrr_from_ranks([r.rank for r in records])


def mrr_from_ranks(ranks) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks")
    return float(np.mean(1.0 / ranks))


def dp_terms(pred, groups, n_classes: int) -> np.ndarray:
    """Signed per-class gaps ``N_k^0/N^0 - N_k^1/N^1`` of hard predictions."""
    pred = np.asarray(pred)
    groups = np.asarray(groups)
    _check_groups(groups)
    c0 = np.bincount(pred[groups == 0], minlength=n_classes)
    c1 = np.bincount(pred[groups == 1], minlength=n_classes)
    return c0 / c0.sum() - c1 / c1.sum()


def diff_dp_arrays(pred, groups, n_classes: int) -> float:
    return float(np.abs(dp_terms(pred, groups, n_classes)).sum())


def diff_eo_arrays(pred, truth, groups, n_classes: int, denominator: str = "predicted") -> float:
    """Sum over classes of the gap in per-group correctness ratios.

    With ``denominator="predicted"`` the ratio for class k is
    correct-and-predicted-k over predicted-k (the measured quantity used in
    all reports). ``"truth"`` divides by the number of members whose true
    class is k instead (true-positive-rate form). Classes for which either
    group has a zero denominator are skipped.
    """
    pred, truth, groups = np.asarray(pred), np.asarray(truth), np.asarray(groups)
    _check_groups(groups)
    if denominator not in ("predicted", "truth"):
        raise ValueError(f"unknown denominator {denominator!r}")
    base = pred if denominator == "predicted" else truth
    correct = pred == truth
    total = 0.0
    for k in range(n_classes):
        ratios = []
        for g in (0, 1):
            in_k = (groups == g) & (base == k)
            n = int(in_k.sum())
            if n == 0:
                break
            ratios.append(np.count_nonzero(correct & in_k) / n)
        if len(ratios) < 2:
            logger.debug("diff_eo: class %d skipped (zero denominator in a group)", k)
            continue
        total += abs(ratios[0] - ratios[1])
    return float(total)


def diff_dp(records: Sequence[PredictionRecord]) -> float:
    pred, _, groups, n = _encode(records)
    return diff_dp_arrays(pred, groups, n)


def diff_eo(records: Sequence[PredictionRecord], denominator: str = "predicted") -> float:
    pred, truth, groups, n = _encode(records)
    return diff_eo_arrays(pred, truth, groups, n, denominator)


def dp_terms_records(records: Sequence[PredictionRecord]) -> tuple[list, np.ndarray]:
    """Class list and signed per-class demographic-parity gaps."""
    pred, _, groups, n = _encode(records)
    classes = sorted({c for r in records for c in r.ranking} | {r.truth for r in records})
    return classes, dp_terms(pred, groups, n)


def evaluate_probs(probs: np.ndarray, truth, groups) -> dict[str, float]:
    """MRR and both fairness gaps from a (users x classes) probability matrix.

    Ties in probability rank the lower class index first.
    """
    probs = np.asarray(probs)
    truth = np.asarray(truth)
    order = np.argsort(-probs, axis=1, kind="stable")
    ranks = np.argmax(order == truth[:, None], axis=1) + 1
    pred = order[:, 0]
    n = probs.shape[1]
    return {
        "mrr": mrr_from_ranks(ranks),
        "diff_dp": diff_dp_arrays(pred, groups, n),
        "diff_eo": diff_eo_arrays(pred, truth, groups, n),
    }
