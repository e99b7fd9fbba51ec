"""Adam-based training loop with periodic checkpoints and validation-based
selection, plus the pooling-size sweep and loss-comparison protocols.

One training step = one candidate list (one query). Runs are fully
deterministic given (seed, config, data).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import losses
from .dataio import sample_training_list
from .errors import ConfigError, DataError, DegenerateInputError, NumericError
from .expertrank import ExpertRankConfig, expertrank_loss, init_gate_params
from .metrics import evaluate_run, metric_key, paired_ttest, parse_metric, rank_documents
from .scorers import make_scorer, score_split, score_values, scorer_from_spec


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "listnet"
    scorer: str = "mlp"
    hidden: tuple = (16, 8)
    lr: float = 1e-4
    epochs: int = 15
    checkpoint_interval: int = 3
    val_metric: str = "mrr@10"
    neg_per_query: int = 50
    resample_negatives: str = "epoch"  # "epoch" or "once"
    seed: int = 0
    pool_sizes: tuple = (5, 7, 10, 25)
    gate_hidden: int = 8
    margin: float = 1.0
    temperature: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "pool_sizes", tuple(int(p) for p in self.pool_sizes))
        if self.loss not in losses.LOSS_NAMES:
            raise ConfigError(f"unknown loss {self.loss!r}, expected one of {losses.LOSS_NAMES}")
        if self.scorer not in ("linear", "mlp"):
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint interval must be >= 1")
        if self.neg_per_query < 1:
            raise ConfigError("neg_per_query must be >= 1")
        if self.resample_negatives not in ("once", "epoch"):
            raise ConfigError("resample_negatives must be 'once' or 'epoch'")
        parse_metric(self.val_metric)

    def expertrank_config(self):
        return ExpertRankConfig(pool_sizes=self.pool_sizes, gate_hidden=self.gate_hidden)


@dataclass
class Checkpoint:
    epoch: int
    params: dict          # name -> value array snapshot
    val_value: float


@dataclass
class TrainResult:
    config: TrainConfig
    scorer: object
    store: ad.ParamStore  # parameters at the final epoch
    best: Checkpoint
    checkpoints: list
    log_lines: list = field(default_factory=list)


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """One Adam update over every parameter, reading the gradient buffers."""
    if t < 1:
        raise ConfigError("adam_step needs t >= 1")
    for name, p in store.items():
        g = p.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if "m" not in p.state:
            p.state["m"] = np.zeros_like(p.value)
            p.state["v"] = np.zeros_like(p.value)
        m, v = p.state["m"], p.state["v"]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


def build_list_loss(config, scorer, store, cl):
    """Scalar loss node for one training list under the configured loss."""
    cl.check_trainable()
    if config.loss == "expertrank":
        pos = cl.pos_indices()
        neg = cl.neg_indices()
        sc = score_split(scorer, store, cl.features[pos], cl.features[neg])
        return expertrank_loss(
            sc.pos_scores, sc.neg_scores, sc.pos_features, sc.neg_features,
            config.expertrank_config(), store,
        )
    scores = ad.concat([scorer.score(store, x)[0] for x in cl.features])
    if config.loss == "listnet":
        return losses.listnet(scores, cl.labels)
    if config.loss == "listmle":
        return losses.listmle(scores, cl.labels)
    if config.loss == "approxndcg":
        return losses.approx_ndcg(scores, cl.labels, config.temperature)
    if config.loss == "cross_entropy":
        return losses.cross_entropy_list(scores, cl.labels)
    if config.loss == "margin":
        return losses.margin_list(scores, cl.labels, config.margin)
    raise ConfigError(f"unknown loss {config.loss!r}")


def build_run(scorer, store, lists):
    """Rank every candidate list with frozen parameters."""
    run = {}
    for cl in lists:
        scores = score_values(scorer, store, cl.features)
        by_doc = dict(zip(cl.doc_ids, scores))
        run[cl.qid] = [(d, by_doc[d]) for d in rank_documents(cl.doc_ids, scores)]
    return run


def evaluate_model(scorer, store, lists, qrels, metric_specs):
    run = build_run(scorer, store, lists)
    report = evaluate_run({q: [d for d, _ in docs] for q, docs in run.items()}, qrels, metric_specs)
    return run, report


def _feature_dim(lists):
    dims = {cl.dim for cl in lists}
    if len(dims) != 1:
        raise DataError(f"inconsistent feature dimensionality across queries: {sorted(dims)}")
    return dims.pop()


def init_model(config, feature_dim):
    """Fresh scorer + parameter store for a config, seeded deterministically."""
    scorer_seed, gate_seed = np.random.SeedSequence(config.seed).spawn(4)[:2]
    scorer = make_scorer(config.scorer, feature_dim, config.hidden)
    store = ad.ParamStore()
    scorer.init_params(store, np.random.default_rng(scorer_seed))
    if config.loss == "expertrank":
        init_gate_params(store, config.expertrank_config(), scorer.feature_dim,
                         np.random.default_rng(gate_seed))
    return scorer, store


def train(config, train_lists, valid_lists, qrels):
    """Fixed-epoch training with checkpoints every `checkpoint_interval`
    epochs; returns the checkpoint with the best validation metric (ties
    resolved toward the earliest epoch).
    """
    if not train_lists:
        raise DataError("no training queries")
    for cl in train_lists:
        cl.check_trainable()
    dim = _feature_dim(train_lists + valid_lists)
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    scorer, store = init_model(config, dim)
    order_rng = np.random.default_rng(seeds[2])
    sample_rng = np.random.default_rng(seeds[3])

    if config.resample_negatives == "once":
        fixed = [sample_training_list(cl, config.neg_per_query, sample_rng) for cl in train_lists]

    log_lines = []
    checkpoints = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(train_lists))
        epoch_losses = []
        for qi in order:
            if config.resample_negatives == "epoch":
                cl = sample_training_list(train_lists[qi], config.neg_per_query, sample_rng)
            else:
                cl = fixed[qi]
            loss = build_list_loss(config, scorer, store, cl)
            value = float(loss.value)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, query {cl.qid!r}")
            store.zero_grads()
            ad.backward(loss)
            step += 1
            try:
                adam_step(store, config.lr, t=step)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, query {cl.qid!r}: {exc}") from exc
            epoch_losses.append(value)
        mean_loss = sum(epoch_losses) / len(epoch_losses)
        log_lines.append(f"epoch {epoch} mean_train_loss {mean_loss:.10f}")
        if epoch % config.checkpoint_interval == 0:
            val = _validation_value(config, scorer, store, valid_lists, qrels)
            checkpoints.append(Checkpoint(epoch=epoch, params=store.snapshot(), val_value=val))
            log_lines.append(f"checkpoint epoch {epoch} val_{config.val_metric} {val:.10f}")

    if not checkpoints:
        # interval longer than the run: keep at least the final state
        val = _validation_value(config, scorer, store, valid_lists, qrels)
        checkpoints.append(Checkpoint(epoch=config.epochs, params=store.snapshot(), val_value=val))
        log_lines.append(f"checkpoint epoch {config.epochs} val_{config.val_metric} {val:.10f}")

    best = checkpoints[0]
    for ck in checkpoints[1:]:
        if ck.val_value > best.val_value:
            best = ck
    log_lines.append(f"best epoch {best.epoch} val_{config.val_metric} {best.val_value:.10f}")
    return TrainResult(config=config, scorer=scorer, store=store, best=best,
                       checkpoints=checkpoints, log_lines=log_lines)


def _validation_value(config, scorer, store, valid_lists, qrels):
    if not valid_lists:
        return 0.0
    _, report = evaluate_model(scorer, store, valid_lists, qrels, [config.val_metric])
    return report.aggregates[config.val_metric]


def restore_checkpoint(checkpoint):
    """Store loaded from a checkpoint snapshot; evaluating it reproduces the
    checkpoint's validation value exactly."""
    store = ad.ParamStore()
    for name, arr in checkpoint.params.items():
        store.add(name, arr)
    return store


def sweep_pool_sizes(config, combinations, train_lists, valid_lists, test_lists, qrels,
                     metric_specs=("mrr@10",)):
    """Train one model per pooling-size combination with identical seeds and
    report test metrics; the best row by the first metric is starred.
    Invalid combinations are skipped with a warning.
    """
    rows = []
    for combo in combinations:
        combo = tuple(int(p) for p in combo)
        try:
            ExpertRankConfig(pool_sizes=combo, gate_hidden=config.gate_hidden)
            if combo[3] > config.neg_per_query:
                raise ConfigError(
                    f"largest pooling size {combo[3]} exceeds neg_per_query {config.neg_per_query}"
                )
        except ConfigError as exc:
            warnings.warn(f"skipping combination {list(combo)}: {exc}", stacklevel=2)
            continue
        run_config = replace(config, loss="expertrank", pool_sizes=combo)
        result = train(run_config, train_lists, valid_lists, qrels)
        best_store = restore_checkpoint(result.best)
        _, report = evaluate_model(result.scorer, best_store, test_lists, qrels, metric_specs)
        rows.append({"combination": combo, "metrics": dict(report.aggregates)})
    if rows:
        primary = metric_key(*parse_metric(metric_specs[0]))
        best_idx = max(range(len(rows)), key=lambda i: rows[i]["metrics"][primary])
        for i, row in enumerate(rows):
            row["best"] = i == best_idx
    return rows


def compare_losses(config, loss_names, seeds, train_lists, valid_lists, test_lists, qrels,
                   primary_metric="mrr@10", metric_specs=None):
    """Train every loss under every seed on shared data, then paired-t-test
    each loss pair on the per-query primary metric (values paired by
    (seed, query) and concatenated across seeds).
    """
    if len(loss_names) < 2:
        raise ConfigError("compare needs at least two losses")
    metric_specs = list(metric_specs or [primary_metric])
    if primary_metric not in metric_specs:
        metric_specs.insert(0, primary_metric)
    primary = metric_key(*parse_metric(primary_metric))
    rows = []
    per_loss_vectors = {name: [] for name in loss_names}
    for name in loss_names:
        for seed in seeds:
            run_config = replace(config, loss=name, seed=int(seed))
            result = train(run_config, train_lists, valid_lists, qrels)
            best_store = restore_checkpoint(result.best)
            _, report = evaluate_model(result.scorer, best_store, test_lists, qrels, metric_specs)
            rows.append({
                "loss": name,
                "seed": int(seed),
                "best_epoch": result.best.epoch,
                "metrics": dict(report.aggregates),
            })
            per_loss_vectors[name].extend(
                report.per_query[q][primary] for q in sorted(report.per_query)
            )
    ttests = []
    for i, name_a in enumerate(loss_names):
        for name_b in loss_names[i + 1:]:
            entry = {"loss_a": name_a, "loss_b": name_b}
            try:
                t, p = paired_ttest(per_loss_vectors[name_a], per_loss_vectors[name_b])
                entry.update(t=t, p=p, significant=p < 0.05, degenerate=False)
            except DegenerateInputError:
                entry.update(t=None, p=None, significant=False, degenerate=True)
            ttests.append(entry)
    return {"rows": rows, "ttests": ttests}


# --- model serialization -------------------------------------------------

MODEL_FORMAT = "rankforge-model"


def save_model(path, scorer, store, meta=None):
    """Write scorer spec + parameters as deterministic JSON; floats keep
    full precision via repr round-tripping."""
    payload = {
        "format": MODEL_FORMAT,
        "scorer": scorer.spec(),
        "meta": meta or {},
        "params": {
            name: {"shape": list(p.value.shape), "data": p.value.reshape(-1).tolist()}
            for name, p in store.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a rankforge model file")
    scorer = scorer_from_spec(payload["scorer"])
    store = ad.ParamStore()
    for name, entry in payload["params"].items():
        store.add(name, np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]))
    return scorer, store, payload.get("meta", {})
