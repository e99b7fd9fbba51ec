"""Scoring models: map a query-document feature vector to a ranking score
plus the matching-feature vector consumed by the expert gating networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass(frozen=True)
class KernelBank:
    """Gaussian kernel means and widths for soft-match pooling."""

    mus: tuple
    sigmas: tuple

    def __post_init__(self):
        if len(self.mus) != len(self.sigmas):
            raise ConfigError("kernel bank needs one sigma per mu")
        if any(s <= 0 for s in self.sigmas):
            raise ConfigError("kernel widths must be positive")

    def __len__(self):
        return len(self.mus)


def default_kernel_bank():
    """Eleven Gaussian kernels: one exact-match kernel (mu=1.0, sigma=1e-3)
    and ten soft-match kernels with means -0.9, -0.7, ..., 0.9 at sigma=0.1.
    """
    soft_mus = [round(-0.9 + 0.2 * i, 1) for i in range(10)]
    return KernelBank(mus=(1.0, *soft_mus), sigmas=(1e-3,) + (0.1,) * 10)


_LOG_CLAMP = 1e-10


def knrm_features(sim, bank=None):
    """Kernel-pooled soft-match features from a query-document similarity matrix.

    For each kernel k: phi_k = sum_i log(max(eps, sum_j exp(-(sim_ij - mu_k)^2
    / (2 sigma_k^2)))). Used as a fixed feature extractor; no gradient flows
    into the similarity matrix.
    """
    bank = bank or default_kernel_bank()
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.size == 0:
        raise ConfigError("knrm_features expects a non-empty 2-d similarity matrix")
    feats = np.empty(len(bank))
    for k, (mu, sigma) in enumerate(zip(bank.mus, bank.sigmas)):
        soft_tf = np.exp(-((sim - mu) ** 2) / (2.0 * sigma * sigma)).sum(axis=1)
        feats[k] = np.log(np.maximum(soft_tf, _LOG_CLAMP)).sum()
    return feats


class LinearScorer:
    """score = w . x + b; the matching features are the raw inputs."""

    kind = "linear"

    def __init__(self, dim):
        if dim < 1:
            raise ConfigError("linear scorer needs dim >= 1")
        self.dim = dim

    @property
    def feature_dim(self):
        return self.dim

    def init_params(self, store, rng):
        store.add("scorer.w", rng.normal(0.0, 0.1, size=self.dim))
        store.add("scorer.b", np.zeros(()))

    def score(self, store, x):
        """Return (score node, matching-feature node) for one document."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ConfigError(f"linear scorer expects dim {self.dim}, got shape {x.shape}")
        feats = ad.constant(x)
        s = ad.dot(store.node("scorer.w"), feats) + store.node("scorer.b")
        return s, feats

    def spec(self):
        return {"kind": self.kind, "dim": self.dim}


class MLPScorer:
    """Tanh hidden layers with a linear scalar head; the matching features
    are the activations of the last hidden layer.
    """

    kind = "mlp"

    def __init__(self, dim, hidden=(16, 8)):
        hidden = tuple(int(h) for h in hidden)
        if dim < 1:
            raise ConfigError("mlp scorer needs dim >= 1")
        if not hidden or any(h < 1 for h in hidden):
            raise ConfigError("mlp scorer needs at least one positive hidden width")
        self.dim = dim
        self.hidden = hidden

    @property
    def feature_dim(self):
        return self.hidden[-1]

    def init_params(self, store, rng):
        widths = (self.dim, *self.hidden)
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            store.add(f"scorer.W{i}", rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_out, n_in)))
            store.add(f"scorer.b{i}", np.zeros(n_out))
        store.add("scorer.w_out", rng.normal(0.0, 1.0 / math.sqrt(self.hidden[-1]), size=self.hidden[-1]))
        store.add("scorer.b_out", np.zeros(()))

    def score(self, store, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ConfigError(f"mlp scorer expects dim {self.dim}, got shape {x.shape}")
        h = ad.constant(x)
        for i in range(len(self.hidden)):
            h = ad.tanh_map(ad.affine(h, store.node(f"scorer.W{i}"), store.node(f"scorer.b{i}")))
        s = ad.dot(store.node("scorer.w_out"), h) + store.node("scorer.b_out")
        return s, h

    def spec(self):
        return {"kind": self.kind, "dim": self.dim, "hidden": list(self.hidden)}


def make_scorer(kind, dim, hidden=(16, 8)):
    if kind == "linear":
        return LinearScorer(dim)
    if kind == "mlp":
        return MLPScorer(dim, hidden)
    raise ConfigError(f"unknown scorer kind {kind!r}")


def scorer_from_spec(spec):
    kind = spec.get("kind")
    if kind == "linear":
        return LinearScorer(int(spec["dim"]))
    if kind == "mlp":
        return MLPScorer(int(spec["dim"]), tuple(spec["hidden"]))
    raise ConfigError(f"unknown scorer kind {kind!r}")


@dataclass
class ScoredCandidates:
    """Graph nodes for one candidate list, split by relevance label."""

    pos_scores: ad.Node
    neg_scores: ad.Node
    pos_features: ad.Node
    neg_features: ad.Node


def score_split(scorer, store, pos_inputs, neg_inputs):
    """Score relevant and non-relevant inputs into a ScoredCandidates bundle."""
    if len(pos_inputs) == 0 or len(neg_inputs) == 0:
        raise ConfigError("score_split needs at least one input on each side")
    pos = [scorer.score(store, x) for x in pos_inputs]
    neg = [scorer.score(store, x) for x in neg_inputs]
    return ScoredCandidates(
        pos_scores=ad.concat([s for s, _ in pos]),
        neg_scores=ad.concat([s for s, _ in neg]),
        pos_features=ad.stack_rows([f for _, f in pos]),
        neg_features=ad.stack_rows([f for _, f in neg]),
    )


def score_values(scorer, store, inputs):
    """Plain forward scores for frozen parameters, one float per row."""
    return np.array([float(scorer.score(store, x)[0].value) for x in inputs])
