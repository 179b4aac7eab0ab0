"""Ranking metrics over runs plus teacher disagreement measurement.

Per-query metrics return None for queries excluded from aggregation:
queries with no relevant judgments (no positive grade) cannot be scored
by MRR/recall/success, and NDCG is undefined when the ideal DCG is zero.
Means are taken over evaluated queries only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import EvaluationError, ValidationError


def _relevant_grades(judgments, query_id):
    return judgments.relevant_docs(query_id)


def mrr_at_k(run, judgments, k):
    """Reciprocal rank of the first relevant doc in the top k, else 0."""
    _check_k(k)
    relevant = _relevant_grades(judgments, run.query_id)
    if not relevant:
        return None
    for entry in run.entries[:k]:
        if entry.doc_id in relevant:
            return 1.0 / entry.rank
    return 0.0


def recall_at_k(run, judgments, k):
    """Fraction of the relevant set retrieved in the top k."""
    _check_k(k)
    relevant = _relevant_grades(judgments, run.query_id)
    if not relevant:
        return None
    found = sum(1 for e in run.entries[:k] if e.doc_id in relevant)
    return found / len(relevant)


def success_at_k(run, judgments, k):
    """1 if any relevant doc appears in the top k, else 0."""
    _check_k(k)
    relevant = _relevant_grades(judgments, run.query_id)
    if not relevant:
        return None
    return 1.0 if any(e.doc_id in relevant for e in run.entries[:k]) else 0.0


def ndcg_at_k(run, judgments, k):
    """Graded NDCG with gain 2^g - 1 and log2(rank + 1) discounts.

    The ideal ordering ranks all judged docs by grade, whether or not the
    run retrieved them.
    """
    _check_k(k)
    judged = judgments.judged_docs(run.query_id)
    ideal_gains = sorted((g for g in judged.values() if g > 0), reverse=True)
    idcg = sum(
        (2.0**g - 1.0) / math.log2(r + 1)
        for r, g in enumerate(ideal_gains[:k], start=1)
    )
    if idcg == 0.0:
        return None
    dcg = sum(
        (2.0 ** judged.get(e.doc_id, 0) - 1.0) / math.log2(e.rank + 1)
        for e in run.entries[:k]
    )
    return dcg / idcg


def _check_k(k):
    if k < 1:
        raise ValidationError("metric cutoff k must be >= 1")


METRIC_FUNCS = {
    "mrr": mrr_at_k,
    "recall": recall_at_k,
    "success": success_at_k,
    "ndcg": ndcg_at_k,
}


@dataclass
class MetricSummary:
    name: str
    per_query: dict
    mean: float
    n_evaluated: int
    n_excluded: int


@dataclass
class MetricReport:
    summaries: dict = field(default_factory=dict)

    def __getitem__(self, name):
        if name not in self.summaries:
            raise EvaluationError(f"no metric {name!r} in report")
        return self.summaries[name]

    def names(self):
        return list(self.summaries)

    def to_json(self):
        payload = {
            name: {
                "mean": s.mean,
                "n_evaluated": s.n_evaluated,
                "n_excluded": s.n_excluded,
                "per_query": s.per_query,
            }
            for name, s in self.summaries.items()
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def format_table(self):
        """Aligned plain-text table of means and query counts."""
        rows = [("metric", "mean", "evaluated", "excluded")]
        for name, s in self.summaries.items():
            rows.append((name, f"{s.mean:.4f}", str(s.n_evaluated), str(s.n_excluded)))
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        lines = []
        for r in rows:
            lines.append(
                "  ".join(val.ljust(w) for val, w in zip(r, widths)).rstrip()
            )
        return "\n".join(lines)


def evaluate_runs(runs, judgments, ks=(10,), metrics=("mrr", "recall", "success", "ndcg")):
    """Score a set of runs (mapping query_id -> RunList) at each cutoff.

    Returns a MetricReport with one summary per metric/cutoff pair, named
    like "mrr@10".  Raises EvaluationError when every query is excluded
    for a metric.
    """
    if not runs:
        raise EvaluationError("no runs to evaluate")
    for query_id, run in runs.items():
        if run.query_id != query_id:
            raise ValidationError(
                f"run for {run.query_id!r} stored under key {query_id!r}"
            )
    report = MetricReport()
    for name in metrics:
        if name not in METRIC_FUNCS:
            raise ValidationError(f"unknown metric {name!r}")
        func = METRIC_FUNCS[name]
        for k in ks:
            per_query = {}
            for query_id in sorted(runs):
                per_query[query_id] = func(runs[query_id], judgments, k)
            values = [v for v in per_query.values() if v is not None]
            if not values:
                raise EvaluationError(
                    f"metric {name}@{k}: every query was excluded"
                )
            report.summaries[f"{name}@{k}"] = MetricSummary(
                name=f"{name}@{k}",
                per_query=per_query,
                mean=sum(values) / len(values),
                n_evaluated=len(values),
                n_excluded=len(per_query) - len(values),
            )
    return report


@dataclass
class DisagreementReport:
    """Share of sampled pairs where the pairwise teacher contradicts the
    pointwise ranking (ties at exactly 0.5 are excluded)."""

    rate: float
    n_disagree: int
    n_used: int
    n_excluded: int


def pairwise_disagreement(samples):
    """Measure teacher disagreement over an iterable of pair samples.

    A pair disagrees when the pairwise teacher's preferred doc is the one
    the pointwise reranking placed lower.  Raises EvaluationError when no
    usable pairs remain.
    """
    n_disagree = 0
    n_used = 0
    n_excluded = 0
    for sample in samples:
        for pair in sample.pairs:
            if pair.p is None:
                raise ValidationError(
                    f"query {sample.query_id!r}: pair without teacher probability"
                )
            if pair.p == 0.5:
                n_excluded += 1
                continue
            teacher_prefers_i = pair.p > 0.5
            pointwise_prefers_i = pair.rank_i < pair.rank_j
            if teacher_prefers_i != pointwise_prefers_i:
                n_disagree += 1
            n_used += 1
    if n_used == 0:
        raise EvaluationError("no usable pairs: input empty or all ties")
    return DisagreementReport(
        rate=n_disagree / n_used,
        n_disagree=n_disagree,
        n_used=n_used,
        n_excluded=n_excluded,
    )
