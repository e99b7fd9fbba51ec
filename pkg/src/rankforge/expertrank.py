"""Coarse-grained expert-mixture listwise loss.

Non-relevant candidates are pooled over contiguous windows at four sizes
(two low-range, two high-range). Low-range windows keep only the local
score maximum; high-range windows keep both the maximum and the minimum.
Each pooled list feeds a ListNet expert, and a learned gating network
turns per-window score ranges plus matching features into a softmax
weight per expert. The final loss is the gate-weighted sum of the four
expert losses. Relevant documents are never pooled. All gate parameters
can be stripped after training without changing any score the underlying
model produces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError
from .losses import listnet

LOW_BASIS = (2, 3, 4, 5, 7)
HIGH_BASIS = (10, 17, 25)

# the 15 default pooling-size combinations accepted by the sweep command
SWEEP_COMBINATIONS = (
    (2, 3, 10, 17),
    (2, 3, 10, 25),
    (2, 7, 10, 17),
    (3, 4, 10, 17),
    (3, 4, 17, 25),
    (3, 5, 10, 17),
    (3, 5, 17, 25),
    (3, 7, 10, 17),
    (4, 5, 10, 17),
    (4, 7, 10, 17),
    (4, 7, 10, 25),
    (4, 7, 17, 25),
    (5, 7, 10, 17),
    (5, 7, 10, 25),
    (5, 7, 17, 25),
)

DEFAULT_POOL_SIZES = (5, 7, 10, 25)


@dataclass(frozen=True)
class ExpertRankConfig:
    """Four pooling sizes (two low-range then two high-range) plus the
    hidden width of every gating network."""

    pool_sizes: tuple = DEFAULT_POOL_SIZES
    gate_hidden: int = 8

    def __post_init__(self):
        sizes = tuple(int(p) for p in self.pool_sizes)
        object.__setattr__(self, "pool_sizes", sizes)
        if len(sizes) != 4:
            raise ConfigError(f"pool_sizes needs 4 entries, got {sizes!r}")
        if sizes[0] < 1 or not (sizes[0] < sizes[1] < sizes[2] < sizes[3]):
            raise ConfigError(f"pool_sizes must be strictly increasing and >= 1, got {sizes!r}")
        if self.gate_hidden < 1:
            raise ConfigError("gate_hidden must be >= 1")

    @property
    def p_low(self):
        return self.pool_sizes[:2]

    @property
    def p_high(self):
        return self.pool_sizes[2:]


@dataclass(frozen=True)
class WindowSummary:
    """Score statistics of one pooling window, for gating signals."""

    s_pos_mean: float
    s_neg_max: float
    s_neg_min: float
    ranges: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self,
            "ranges",
            (
                self.s_pos_mean - self.s_neg_max,
                self.s_pos_mean - self.s_neg_min,
                self.s_neg_max - self.s_neg_min,
            ),
        )

    @classmethod
    def from_scores(cls, pos_scores, window_scores):
        pos_scores = np.asarray(pos_scores, dtype=np.float64)
        window_scores = np.asarray(window_scores, dtype=np.float64)
        return cls(float(pos_scores.mean()), float(window_scores.max()), float(window_scores.min()))


def partition_windows(m, p):
    """Split 0..m into consecutive windows of size p; the final window may
    be shorter but is never empty. Returns (start, stop) pairs.
    """
    if p < 1:
        raise ConfigError(f"pooling size must be >= 1, got {p}")
    if m < 1:
        raise ConfigError(f"cannot partition an empty list, m={m}")
    return [(lo, min(lo + p, m)) for lo in range(0, m, p)]


def coarse_grain_low(neg_scores, p):
    """Per-window maximum scores of the non-relevant candidates.

    Returns (selected scores node, selected indices); the backward pass
    routes each window's full adjoint to its winning index only.
    """
    vals = neg_scores.value
    indices = [lo + int(np.argmax(vals[lo:hi])) for lo, hi in partition_windows(vals.size, p)]
    return ad.gather(neg_scores, indices), indices


def coarse_grain_high(neg_scores, p):
    """Per-window maximum and minimum scores of the non-relevant candidates.

    Returns (max node, max indices, min node, min indices); in a size-1
    window the same index appears in both lists.
    """
    vals = neg_scores.value
    windows = partition_windows(vals.size, p)
    max_idx = [lo + int(np.argmax(vals[lo:hi])) for lo, hi in windows]
    min_idx = [lo + int(np.argmin(vals[lo:hi])) for lo, hi in windows]
    return ad.gather(neg_scores, max_idx), max_idx, ad.gather(neg_scores, min_idx), min_idx


def _pooled_listnet(pos_scores, pooled_parts):
    scores = ad.concat([pos_scores, *pooled_parts])
    n_pos = pos_scores.value.size
    n_neg = sum(part.value.size for part in pooled_parts)
    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    return listnet(scores, labels)


def expert_low(pos_scores, neg_scores, p):
    """ListNet over all relevant scores plus the per-window maxima."""
    selected, _ = coarse_grain_low(neg_scores, p)
    return _pooled_listnet(pos_scores, [selected])


def expert_high(pos_scores, neg_scores, p):
    """ListNet over all relevant scores plus per-window maxima and minima."""
    max_sel, _, min_sel, _ = coarse_grain_high(neg_scores, p)
    return _pooled_listnet(pos_scores, [max_sel, min_sel])


def init_gate_params(store, config, feature_dim, rng):
    """Create the per-expert gating parameters under the `gate.` prefix.

    Expert i in 0..3 gets a score gate (3 -> gate_hidden -> 1) and a
    feature gate (2d or 3d -> gate_hidden -> 1); the first two experts are
    low-range (max-pooled features only), the last two high-range.
    """
    if feature_dim < 1:
        raise ConfigError("feature_dim must be >= 1")
    h = config.gate_hidden
    for i in range(4):
        feat_in = (2 if i < 2 else 3) * feature_dim
        for head, n_in in (("score", 3), ("feat", feat_in)):
            prefix = f"gate.e{i}.{head}"
            store.add(f"{prefix}.W1", rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(h, n_in)))
            store.add(f"{prefix}.b1", np.zeros(h))
            store.add(f"{prefix}.w2", rng.normal(0.0, 1.0 / np.sqrt(h), size=h))
            store.add(f"{prefix}.b2", np.zeros(()))


def _gate_head(store, prefix, x):
    hidden = ad.tanh_map(ad.affine(x, store.node(f"{prefix}.W1"), store.node(f"{prefix}.b1")))
    return ad.dot(store.node(f"{prefix}.w2"), hidden) + store.node(f"{prefix}.b2")


def gate_score_signal(pos_scores, neg_scores, p, store, prefix):
    """Scalar gate logit from per-window score ranges.

    For every window the three ranges (mean positive score minus window
    max, mean positive minus window min, window max minus window min) are
    computed, averaged across windows, and fed through one tanh hidden
    layer with a linear scalar head.
    """
    s_pos_mean = ad.mean(pos_scores)
    rows = []
    for lo, hi in partition_windows(neg_scores.value.size, p):
        window = ad.gather(neg_scores, range(lo, hi))
        s_max, _ = ad.select_max(window)
        s_min, _ = ad.select_min(window)
        rows.append(ad.concat([
            ad.sub(s_pos_mean, s_max),
            ad.sub(s_pos_mean, s_min),
            ad.sub(s_max, s_min),
        ]))
    ranges = rows[0] if len(rows) == 1 else ad.mean_rows(ad.stack_rows(rows))
    return _gate_head(store, prefix, ranges)


def gate_feature_signal(pos_features, selected_neg_features, store, prefix):
    """Scalar gate logit from mean matching features.

    Input is the concatenation of the mean relevant-feature vector with
    the mean of each selected non-relevant feature block (one block for
    low-range experts, two for high-range). Gradient flows back through
    the features into the scorer.
    """
    parts = [ad.mean_rows(pos_features)]
    parts.extend(ad.mean_rows(block) for block in selected_neg_features)
    return _gate_head(store, prefix, ad.concat(parts))


def gate_combine(logits_score, logits_feat):
    """Softmax gate over the four per-expert logit sums."""
    if len(logits_score) != 4 or len(logits_feat) != 4:
        raise ConfigError("gate_combine expects four logits per signal family")
    combined = ad.concat([ad.add(s, f) for s, f in zip(logits_score, logits_feat)])
    return ad.softmax_stable(combined)


@dataclass
class ExpertOutputs:
    """Intermediate products of one loss evaluation, for inspection."""

    expert_losses: list          # 4 scalar nodes
    gate_weights: ad.Node        # 4-vector on the simplex
    selected_indices: list       # per expert, one or two index lists


def expertrank_outputs(pos_scores, neg_scores, pos_features, neg_features, config, store):
    """Build the four experts and their gate weights for one candidate list."""
    n_pos = pos_scores.value.size
    n_neg = neg_scores.value.size
    if n_pos < 1:
        raise DataError("candidate list has no relevant document")
    if n_neg < 1:
        raise DataError("candidate list has no non-relevant document")
    if n_neg < config.pool_sizes[3]:
        warnings.warn(
            f"largest pooling size {config.pool_sizes[3]} exceeds the {n_neg} "
            "non-relevant candidates; its windows degenerate to one",
            stacklevel=2,
        )

    experts = []
    logits_score = []
    logits_feat = []
    selections = []
    for i, p in enumerate(config.pool_sizes):
        if i < 2:
            selected, idx = coarse_grain_low(neg_scores, p)
            experts.append(_pooled_listnet(pos_scores, [selected]))
            feat_blocks = [ad.gather_rows(neg_features, idx)]
            selections.append((idx,))
        else:
            max_sel, max_idx, min_sel, min_idx = coarse_grain_high(neg_scores, p)
            experts.append(_pooled_listnet(pos_scores, [max_sel, min_sel]))
            feat_blocks = [ad.gather_rows(neg_features, max_idx), ad.gather_rows(neg_features, min_idx)]
            selections.append((max_idx, min_idx))
        logits_score.append(gate_score_signal(pos_scores, neg_scores, p, store, f"gate.e{i}.score"))
        logits_feat.append(gate_feature_signal(pos_features, feat_blocks, store, f"gate.e{i}.feat"))

    gates = gate_combine(logits_score, logits_feat)
    return ExpertOutputs(expert_losses=experts, gate_weights=gates, selected_indices=selections)


def expertrank_loss(pos_scores, neg_scores, pos_features, neg_features, config, store):
    """Gate-weighted sum of the four expert losses.

    Gradients flow through both the gate weights and the experts (product
    rule), reaching scores, matching features, and gate parameters.
    """
    out = expertrank_outputs(pos_scores, neg_scores, pos_features, neg_features, config, store)
    return ad.dot(out.gate_weights, ad.concat(out.expert_losses))


def strip_gate_params(store):
    """Parameters with every gating entry removed; scorer entries are
    copied untouched, so model outputs are bit-identical afterwards.
    """
    return store.without_prefix("gate.")
