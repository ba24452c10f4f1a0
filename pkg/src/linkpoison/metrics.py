"""Ranking metrics for link prediction and top-k recommendation.

Scores are real-valued, relevance is binary. Tie handling is fixed and
documented: ROC-AUC gives tied positive/negative pairs half credit
(Mann-Whitney convention); the other metrics rank by descending score with
ties broken by original input order (stable sort).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np


def _as_arrays(scores, relevance):
    s = np.asarray(scores, dtype=np.float64).ravel()
    r = np.asarray(relevance).ravel().astype(np.int64)
    if s.shape != r.shape:
        raise ValueError(f"scores and relevance differ in length: {s.shape} vs {r.shape}")
    if not np.isin(r, (0, 1)).all():
        raise ValueError("relevance must be binary")
    return s, r


def _descending_order(scores: np.ndarray) -> np.ndarray:
    # stable sort on negated scores keeps input order among ties
    return np.argsort(-scores, kind="stable")


def roc_auc(scores, relevance) -> float:
    """P(random positive outscores random negative), ties worth 1/2."""
    s, r = _as_arrays(scores, relevance)
    npos = int(r.sum())
    nneg = len(r) - npos
    if npos == 0 or nneg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    # midrank formulation: rank-sum of positives
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[r == 1].sum()
    return float((rank_sum - npos * (npos + 1) / 2.0) / (npos * nneg))


def average_precision(scores, relevance) -> float:
    """Mean of precision-at-rank over the ranks where positives sit."""
    s, r = _as_arrays(scores, relevance)
    if r.sum() == 0:
        raise ValueError("average_precision needs at least one positive")
    ranked = r[_descending_order(s)]
    hits = 0
    total = 0.0
    for idx, rel in enumerate(ranked, start=1):
        if rel:
            hits += 1
            total += hits / idx
    return float(total / hits)


def ndcg_at_k(scores, relevance, k: int) -> float:
    """Discounted cumulative gain of the top-k ranking over its ideal value."""
    if k < 1:
        raise ValueError("k must be >= 1")
    s, r = _as_arrays(scores, relevance)
    npos = int(r.sum())
    if npos == 0:
        return 0.0
    ranked = r[_descending_order(s)]
    dcg = sum(rel / math.log2(pos + 1) for pos, rel in enumerate(ranked[:k], start=1))
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(npos, k) + 1))
    return float(dcg / ideal)


def recall_at_k(scores, relevance, k: int) -> float:
    """Fraction of the relevant items that appear in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    s, r = _as_arrays(scores, relevance)
    npos = int(r.sum())
    if npos == 0:
        raise ValueError("recall_at_k needs at least one relevant item")
    ranked = r[_descending_order(s)]
    return float(ranked[:k].sum() / npos)


RANKING_METRICS = {
    "roc_auc": lambda s, r, k: roc_auc(s, r),
    "ap": lambda s, r, k: average_precision(s, r),
    "ndcg": ndcg_at_k,
    "recall": recall_at_k,
}


@dataclass
class MetricsReport:
    """Clean-vs-poisoned outcome for one (model, dataset, budget, scheme, seed) cell."""

    model: str
    dataset: str
    budget: float
    scheme: str
    seed: int
    metric: str
    clean: float
    poisoned: float

    @property
    def delta(self) -> float:
        return self.clean - self.poisoned

    def to_json(self) -> str:
        record = asdict(self)
        record["delta"] = self.delta
        return json.dumps(record, sort_keys=True)


def write_reports(reports, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")
