"""Ranking-quality metrics (MRR, nDCG, MAP, Precision, Recall at cutoffs)
and a paired two-sided t-test over per-query values.

All metrics use binary relevance. Queries with no relevant documents are
excluded from aggregates and counted separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError, DataError, DegenerateInputError

METRIC_NAMES = ("mrr", "ndcg", "map", "precision", "recall")


def rank_documents(doc_ids, scores):
    """Order document ids by descending score, ties by ascending id."""
    if len(doc_ids) != len(scores):
        raise ConfigError("rank_documents: ids and scores must align")
    if len(set(doc_ids)) != len(doc_ids):
        raise DataError("rank_documents: duplicate document ids")
    return [d for d, _ in sorted(zip(doc_ids, scores), key=lambda t: (-t[1], t[0]))]


def _check_ranked(ranked_ids, relevant):
    if not relevant:
        raise DataError("query has no relevant documents; exclude it upstream")
    if len(set(ranked_ids)) != len(ranked_ids):
        raise DataError("ranking contains duplicate document ids")


def _depth(ranked_ids, k):
    if k is None:
        return len(ranked_ids)
    if k < 1:
        raise ConfigError(f"cutoff must be >= 1, got {k}")
    return min(int(k), len(ranked_ids))


def mrr_at_k(ranked_ids, relevant, k=None):
    """Reciprocal rank of the first relevant document within the cutoff."""
    _check_ranked(ranked_ids, relevant)
    for rank, doc in enumerate(ranked_ids[: _depth(ranked_ids, k)], start=1):
        if doc in relevant:
            return 1.0 / rank
    return 0.0


def ndcg_at_k(ranked_ids, relevant, k=None):
    """Binary-gain nDCG with discount 1/log2(rank + 1)."""
    _check_ranked(ranked_ids, relevant)
    depth = _depth(ranked_ids, k)
    dcg = sum(1.0 / math.log2(r + 1.0) for r, doc in enumerate(ranked_ids[:depth], start=1) if doc in relevant)
    ideal_hits = len(relevant) if k is None else min(len(relevant), int(k))
    idcg = sum(1.0 / math.log2(r + 1.0) for r in range(1, ideal_hits + 1))
    return dcg / idcg


def map_at_k(ranked_ids, relevant, k=None):
    """Average precision at k with denominator min(total relevant, k)."""
    _check_ranked(ranked_ids, relevant)
    depth = _depth(ranked_ids, k)
    hits = 0
    precision_sum = 0.0
    for rank, doc in enumerate(ranked_ids[:depth], start=1):
        if doc in relevant:
            hits += 1
            precision_sum += hits / rank
    denom = len(relevant) if k is None else min(len(relevant), int(k))
    return precision_sum / denom


def precision_recall_at_k(ranked_ids, relevant, k):
    """(relevant-in-top-k / k, relevant-in-top-k / total-relevant)."""
    _check_ranked(ranked_ids, relevant)
    if k is None or k < 1:
        raise ConfigError("precision/recall need a finite cutoff >= 1")
    hits = sum(1 for doc in ranked_ids[: int(k)] if doc in relevant)
    return hits / int(k), hits / len(relevant)


def parse_metric(spec):
    """Split a metric key like 'mrr@10' or 'map' into (name, cutoff)."""
    name, _, cut = spec.partition("@")
    name = name.strip().lower()
    if name not in METRIC_NAMES:
        raise ConfigError(f"unknown metric {spec!r}")
    if not cut or cut in ("full", "inf"):
        k = None
    else:
        try:
            k = int(cut)
        except ValueError:
            raise ConfigError(f"bad metric cutoff in {spec!r}") from None
        if k < 1:
            raise ConfigError(f"bad metric cutoff in {spec!r}")
    if name in ("precision", "recall") and k is None:
        raise ConfigError(f"{name} needs a finite cutoff, e.g. {name}@10")
    return name, k


def metric_key(name, k):
    return name if k is None else f"{name}@{k}"


def compute_metric(name, ranked_ids, relevant, k):
    if name == "mrr":
        return mrr_at_k(ranked_ids, relevant, k)
    if name == "ndcg":
        return ndcg_at_k(ranked_ids, relevant, k)
    if name == "map":
        return map_at_k(ranked_ids, relevant, k)
    if name == "precision":
        return precision_recall_at_k(ranked_ids, relevant, k)[0]
    if name == "recall":
        return precision_recall_at_k(ranked_ids, relevant, k)[1]
    raise ConfigError(f"unknown metric {name!r}")


@dataclass
class RankingReport:
    """Per-query metric values plus arithmetic-mean aggregates."""

    metric_keys: list
    per_query: dict = field(default_factory=dict)   # qid -> {metric key: value}
    aggregates: dict = field(default_factory=dict)  # metric key -> mean
    evaluated: int = 0
    skipped: int = 0  # queries with no relevant documents

    def to_tsv(self):
        lines = ["metric\tcutoff\tvalue\tqueries\tskipped"]
        for key in self.metric_keys:
            name, _, cut = key.partition("@")
            lines.append(
                f"{name}\t{cut or 'full'}\t{self.aggregates[key]:.6f}\t{self.evaluated}\t{self.skipped}"
            )
        return "\n".join(lines) + "\n"


def evaluate_run(run, qrels, metric_specs=("mrr@3", "mrr@10", "mrr", "ndcg@3", "ndcg@10", "ndcg", "map@3", "map@10", "map")):
    """Score a run ({qid: ranked doc ids}) against qrels ({qid: relevant set}).

    Queries whose qrels entry is missing or empty are skipped and counted.
    Aggregation is a deterministic fold in sorted query-id order.
    """
    parsed = [parse_metric(m) for m in metric_specs]
    keys = [metric_key(n, k) for n, k in parsed]
    report = RankingReport(metric_keys=keys)
    for qid in sorted(run):
        relevant = qrels.get(qid) or set()
        if not relevant:
            report.skipped += 1
            continue
        ranked = run[qid]
        report.per_query[qid] = {
            key: compute_metric(name, ranked, relevant, k)
            for key, (name, k) in zip(keys, parsed)
        }
        report.evaluated += 1
    for key in keys:
        vals = [report.per_query[q][key] for q in sorted(report.per_query)]
        report.aggregates[key] = sum(vals) / len(vals) if vals else 0.0
    return report


# --- paired t-test -----------------------------------------------------

_BETA_EPS = 1e-14
_BETA_MAX_ITER = 300


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise ConfigError("incomplete beta continued fraction failed to converge")


def regularized_incomplete_beta(a, b, x):
    """I_x(a, b) by series/continued-fraction evaluation."""
    if a <= 0 or b <= 0:
        raise ConfigError("incomplete beta needs positive shape parameters")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        a * math.log(x)
        + b * math.log1p(-x)
        - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t, dof):
    """P(|T| >= |t|) for Student's t with `dof` degrees of freedom."""
    if dof < 1:
        raise ConfigError("t distribution needs dof >= 1")
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def paired_ttest(per_query_a, per_query_b):
    """Classic paired t over per-query differences; returns (t, p).

    Raises DegenerateInputError when the differences carry no variance.
    """
    a = [float(v) for v in per_query_a]
    b = [float(v) for v in per_query_b]
    if len(a) != len(b):
        raise ConfigError("paired_ttest: unequal sample lengths")
    n = len(a)
    if n < 2:
        raise ConfigError("paired_ttest: need at least two pairs")
    diffs = [x - y for x, y in zip(a, b)]
    mean_d = sum(diffs) / n
    var_d = sum((d - mean_d) ** 2 for d in diffs) / (n - 1)
    if var_d <= 0.0:
        raise DegenerateInputError("paired_ttest: zero-variance differences")
    t = mean_d / math.sqrt(var_d / n)
    return t, student_t_two_sided_p(t, n - 1)
