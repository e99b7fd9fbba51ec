"""Dataset ingestion, TREC qrels/run files, listwise negative sampling,
and synthetic dataset generation with partial-relevance distractors.

Feature files use the sparse ranking format, one document per line:

    <label> qid:<qid> <fid>:<val> ... # <docid>

Feature ids are 1-based; missing ids default to 0.0. When the trailing
comment is absent the document id defaults to "<qid>-<line number>".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ParseError


@dataclass
class CandidateList:
    """One query's documents with binary labels and feature vectors."""

    qid: str
    doc_ids: list
    labels: np.ndarray    # int, {0,1}
    features: np.ndarray  # (len(doc_ids), dim)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if not (len(self.doc_ids) == self.labels.size == self.features.shape[0]):
            raise DataError(f"candidate list {self.qid!r}: misaligned fields")
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise DataError(f"candidate list {self.qid!r}: duplicate document ids")

    @property
    def num_pos(self):
        return int((self.labels == 1).sum())

    @property
    def num_neg(self):
        return int((self.labels == 0).sum())

    @property
    def dim(self):
        return self.features.shape[1]

    def check_trainable(self):
        if self.num_pos < 1 or self.num_neg < 1:
            raise DataError(
                f"training list {self.qid!r} needs at least one relevant and one "
                f"non-relevant document (has {self.num_pos}/{self.num_neg})"
            )

    def pos_indices(self):
        return np.flatnonzero(self.labels == 1)

    def neg_indices(self):
        return np.flatnonzero(self.labels == 0)


def parse_feature_file(path):
    """Read a sparse feature file into CandidateLists grouped by query id.

    Grouping preserves file order; the feature dimensionality is the
    largest feature id seen anywhere in the file.
    """
    rows = []
    max_fid = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            body, _, comment = line.partition("#")
            tokens = body.split()
            if len(tokens) < 2:
                raise ParseError(path, lineno, "expected '<label> qid:<qid> ...'")
            if tokens[0] not in ("0", "1"):
                raise ParseError(path, lineno, f"bad label {tokens[0]!r}, expected 0 or 1")
            label = int(tokens[0])
            if not tokens[1].startswith("qid:") or len(tokens[1]) <= 4:
                raise ParseError(path, lineno, f"bad qid token {tokens[1]!r}")
            qid = tokens[1][4:]
            feats = {}
            for tok in tokens[2:]:
                fid_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(path, lineno, f"bad feature token {tok!r}")
                try:
                    fid = int(fid_s)
                    val = float(val_s)
                except ValueError:
                    raise ParseError(path, lineno, f"bad feature token {tok!r}") from None
                if fid < 1:
                    raise ParseError(path, lineno, f"feature ids are 1-based, got {fid}")
                feats[fid] = val
            max_fid = max(max_fid, max(feats, default=0))
            docid = comment.strip() or f"{qid}-{lineno}"
            rows.append((qid, docid, label, feats))

    grouped = {}
    for qid, docid, label, feats in rows:
        grouped.setdefault(qid, []).append((docid, label, feats))
    lists = []
    for qid, entries in grouped.items():
        features = np.zeros((len(entries), max_fid))
        for r, (_, _, feats) in enumerate(entries):
            for fid, val in feats.items():
                features[r, fid - 1] = val
        lists.append(CandidateList(
            qid=qid,
            doc_ids=[docid for docid, _, _ in entries],
            labels=np.array([label for _, label, _ in entries]),
            features=features,
        ))
    return lists


def write_feature_file(path, lists):
    """Inverse of parse_feature_file; float values keep full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for cl in lists:
            for docid, label, row in zip(cl.doc_ids, cl.labels, cl.features):
                feats = " ".join(f"{fid}:{val!r}" for fid, val in enumerate(row, start=1))
                fh.write(f"{label} qid:{cl.qid} {feats} # {docid}\n")


def parse_qrels(path):
    """Read TREC qrels ('qid 0 docid rel') into {qid: set of relevant ids}."""
    qrels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(path, lineno, "expected 'qid 0 docid rel'")
            qid, _, docid, rel_s = parts
            try:
                rel = int(rel_s)
            except ValueError:
                raise ParseError(path, lineno, f"bad relevance grade {rel_s!r}") from None
            qrels.setdefault(qid, set())
            if rel > 0:
                qrels[qid].add(docid)
    return qrels


def write_qrels(path, qrels):
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for docid in sorted(qrels[qid]):
                fh.write(f"{qid} 0 {docid} 1\n")


def write_run(path, rankings, tag="rankforge"):
    """Write a TREC run file: 'qid Q0 docid rank score tag', ranks from 1,
    scores with six decimals, queries in sorted id order.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(rankings):
            for rank, (docid, score) in enumerate(rankings[qid], start=1):
                fh.write(f"{qid} Q0 {docid} {rank} {score:.6f} {tag}\n")


def parse_run(path):
    """Read a TREC run file back into {qid: [(docid, score)]} in file order."""
    rankings = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6 or parts[1] != "Q0":
                raise ParseError(path, lineno, "expected 'qid Q0 docid rank score tag'")
            try:
                score = float(parts[4])
            except ValueError:
                raise ParseError(path, lineno, f"bad score {parts[4]!r}") from None
            rankings.setdefault(parts[0], []).append((parts[2], score))
    return rankings


def sample_training_list(cl, m_target, rng):
    """Keep every relevant document and sample up to `m_target` non-relevant
    ones without replacement, in freshly shuffled order.

    The shuffled negative order is what later becomes pooling-window
    membership, so each call draws a new permutation from `rng`.
    """
    if cl.num_pos < 1:
        raise DataError(f"list {cl.qid!r} has no relevant document to train on")
    if m_target < 1:
        raise ConfigError("m_target must be >= 1")
    neg = cl.neg_indices()
    take = min(int(m_target), neg.size)
    chosen = rng.permutation(neg)[:take]
    keep = np.concatenate([cl.pos_indices(), chosen])
    return CandidateList(
        qid=cl.qid,
        doc_ids=[cl.doc_ids[i] for i in keep],
        labels=cl.labels[keep],
        features=cl.features[keep],
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic ranking data: per query, a hidden positive-orthant unit
    direction; relevant documents align with it, a `distractor_frac`
    fraction of the non-relevant ones half-align (the partially relevant
    confusers), and the rest are pure noise.
    """

    dim: int = 16
    train_queries: int = 200
    valid_queries: int = 50
    test_queries: int = 50
    pos_per_query: int = 1
    neg_per_query: int = 50
    distractor_frac: float = 0.3
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.dim, self.train_queries, self.valid_queries, self.test_queries,
               self.pos_per_query, self.neg_per_query) < 1:
            raise ConfigError("synthetic spec counts must all be >= 1")
        if not 0.0 <= self.distractor_frac < 1.0:
            raise ConfigError("distractor_frac must be in [0, 1)")
        if self.noise_sd < 0.0:
            raise ConfigError("noise_sd must be >= 0")


_DISTRACTOR_SCALE = 0.5


def generate_synthetic(spec):
    """Build (train, valid, test, qrels); splits share no query ids and the
    qrels cover exactly the generated relevant documents. Deterministic
    under the spec's seed.
    """
    root = np.random.SeedSequence(spec.seed)
    split_seeds = root.spawn(3)
    qrels = {}
    splits = []
    plan = (("tr", spec.train_queries), ("va", spec.valid_queries), ("te", spec.test_queries))
    for (prefix, count), seed in zip(plan, split_seeds):
        rng = np.random.default_rng(seed)
        lists = []
        for q in range(count):
            qid = f"{prefix}{q:04d}"
            direction = np.abs(rng.normal(size=spec.dim))
            direction /= np.linalg.norm(direction)
            n_distract = int(round(spec.neg_per_query * spec.distractor_frac))
            rows = []
            labels = []
            for _ in range(spec.pos_per_query):
                rows.append(direction + spec.noise_sd * rng.normal(size=spec.dim))
                labels.append(1)
            for _ in range(n_distract):
                rows.append(_DISTRACTOR_SCALE * direction + spec.noise_sd * rng.normal(size=spec.dim))
                labels.append(0)
            for _ in range(spec.neg_per_query - n_distract):
                rows.append(spec.noise_sd * rng.normal(size=spec.dim))
                labels.append(0)
            doc_ids = [f"{qid}-d{j:03d}" for j in range(len(rows))]
            cl = CandidateList(qid=qid, doc_ids=doc_ids, labels=np.array(labels), features=np.stack(rows))
            lists.append(cl)
            qrels[qid] = {doc_ids[j] for j in range(spec.pos_per_query)}
        splits.append(lists)
    return splits[0], splits[1], splits[2], qrels
