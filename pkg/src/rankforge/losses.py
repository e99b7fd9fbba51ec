"""Baseline learning-to-rank losses over a candidate list's score nodes.

All listwise losses are invariant under adding a constant to every score
and differentiable through the autodiff tape.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError

LOSS_NAMES = ("cross_entropy", "margin", "listnet", "listmle", "approxndcg", "expertrank")


def _check_labels(labels, op):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError(f"{op}: labels must be a vector")
    if not np.isin(labels, (0, 1)).all():
        raise DataError(f"{op}: labels must be binary")
    if labels.sum() == 0:
        raise DataError(f"{op}: candidate list has no relevant document")
    return labels.astype(np.float64)


def pointwise_bce(score, label):
    """Binary cross-entropy of sigmoid(score) against a 0/1 label.

    Computed as softplus(score) - label * score, which is stable for
    scores of any magnitude.
    """
    if label not in (0, 1):
        raise DataError(f"pointwise_bce: label must be 0 or 1, got {label!r}")
    return ad.softplus(score) + ad.scale(score, -float(label))


def pairwise_margin(s_pos, s_neg, margin=1.0):
    """Hinge on the score gap: max(0, margin - (s_pos - s_neg))."""
    if margin < 0:
        raise ConfigError("pairwise_margin: margin must be >= 0")
    return ad.relu(ad.add_const(ad.neg(ad.sub(s_pos, s_neg)), margin))


def listnet(scores, labels):
    """Cross entropy between the label top-one distribution (uniform over
    relevant documents) and softmax over predicted scores.
    """
    labels = _check_labels(labels, "listnet")
    if scores.value.shape != labels.shape:
        raise ConfigError("listnet: scores and labels must have equal length")
    target = labels / labels.sum()
    return ad.neg(ad.dot(ad.constant(target), ad.log_softmax(scores)))


def listmle(scores, labels):
    """Negative log-likelihood of the observed permutation under the
    sequential-choice (Plackett-Luce) model.

    The observed permutation sorts labels descending; ties among equal
    labels break by current score descending, then index ascending.
    """
    labels = _check_labels(labels, "listmle")
    if scores.value.shape != labels.shape:
        raise ConfigError("listmle: scores and labels must have equal length")
    n = labels.size
    vals = scores.value
    order = sorted(range(n), key=lambda i: (-labels[i], -vals[i], i))
    permuted = ad.gather(scores, order)
    suffix_lses = [ad.logsumexp(ad.gather(permuted, range(t, n))) for t in range(n)]
    return ad.sub(ad.total(ad.concat(suffix_lses)), ad.total(permuted))


def _ideal_dcg(num_relevant):
    return sum(1.0 / math.log2(r + 1.0) for r in range(1, num_relevant + 1))


def approx_ndcg(scores, labels, temperature=0.1):
    """Smooth-rank surrogate of nDCG (negated, so lower is better).

    Each document's rank is approximated by rhat_i = 1 + sum_{j != i}
    sigmoid((s_j - s_i) / temperature); the loss is
    -(1/IDCG) * sum_i label_i / log2(1 + rhat_i).
    """
    if temperature <= 0:
        raise ConfigError("approx_ndcg: temperature must be positive")
    labels = _check_labels(labels, "approx_ndcg")
    if scores.value.shape != labels.shape:
        raise ConfigError("approx_ndcg: scores and labels must have equal length")
    # the j == i term contributes sigmoid(0) = 0.5, so summing over all j
    # and starting from 0.5 reproduces 1 + sum_{j != i}
    diffs = ad.pairwise_diff(scores)
    ranks = ad.add_const(ad.row_sums(ad.sigmoid(ad.scale(diffs, 1.0 / temperature))), 0.5)
    inv_discount = ad.reciprocal(ad.scale(ad.log(ad.add_const(ranks, 1.0)), 1.0 / math.log(2.0)))
    idcg = _ideal_dcg(int(labels.sum()))
    return ad.scale(ad.dot(ad.constant(labels), inv_discount), -1.0 / idcg)


def cross_entropy_list(scores, labels):
    """Mean pointwise BCE over all documents in the list."""
    labels = np.asarray(labels)
    if scores.value.shape != labels.shape:
        raise ConfigError("cross_entropy_list: scores and labels must have equal length")
    terms = [pointwise_bce(ad.gather(scores, [i]), int(labels[i])) for i in range(labels.size)]
    return ad.mean(ad.concat(terms))


def margin_list(scores, labels, margin=1.0):
    """Mean pairwise hinge over all (relevant, non-relevant) pairs."""
    labels = _check_labels(labels, "margin_list")
    if labels.min() != 0:
        raise DataError("margin_list: candidate list has no non-relevant document")
    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)
    terms = []
    for i in pos_idx:
        for j in neg_idx:
            terms.append(pairwise_margin(ad.gather(scores, [i]), ad.gather(scores, [j]), margin))
    return ad.mean(ad.concat(terms))
