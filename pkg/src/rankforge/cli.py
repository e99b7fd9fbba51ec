"""Command-line interface.

Commands: gen-data, train, eval, sweep, compare. Every config-file key can
also be given as a flag of the same name; flags win over the config file.
Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .dataio import (
    SyntheticSpec, generate_synthetic, parse_feature_file, parse_qrels,
    write_feature_file, write_qrels, write_run,
)
from .errors import ConfigError, RankforgeError
from .expertrank import SWEEP_COMBINATIONS, strip_gate_params
from .metrics import evaluate_run
from .trainer import (
    TrainConfig, build_run, compare_losses, load_model, restore_checkpoint,
    save_model, sweep_pool_sizes, train,
)

DEFAULT_EVAL_METRICS = "mrr@3,mrr@10,mrr,ndcg@3,ndcg@10,ndcg,map@3,map@10,map,precision@10,recall@10"


def _int_list(text):
    try:
        return tuple(int(tok) for tok in str(text).replace(";", ",").split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _parse_combinations(text):
    """Sweep combinations: semicolon-separated tokens, each either a 1-based
    index into the default 15 or an explicit 'a,b,c,d' list."""
    combos = []
    for tok in str(text).split(";"):
        tok = tok.strip()
        if not tok:
            continue
        if "," in tok:
            parts = tuple(int(x) for x in tok.split(","))
            if len(parts) != 4:
                raise ConfigError(f"combination {tok!r} needs exactly 4 pooling sizes")
            combos.append(parts)
        else:
            idx = int(tok)
            if not 1 <= idx <= len(SWEEP_COMBINATIONS):
                raise ConfigError(f"combination index {idx} out of range 1..{len(SWEEP_COMBINATIONS)}")
            combos.append(SWEEP_COMBINATIONS[idx - 1])
    if not combos:
        raise ConfigError("no combinations given")
    return combos


def _add_train_flags(sp):
    sp.add_argument("--config", help="flat key = value file; flags override it")
    sp.add_argument("--train", required=True, help="training feature file")
    sp.add_argument("--valid", required=True, help="validation feature file")
    sp.add_argument("--qrels", required=True, help="TREC qrels file")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--loss", default="listnet",
                    help="cross_entropy | margin | listnet | listmle | approxndcg | expertrank")
    sp.add_argument("--scorer", default="mlp", help="linear | mlp")
    sp.add_argument("--hidden", type=_int_list, default=(16, 8), help="mlp hidden widths, e.g. 16,8")
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--epochs", type=int, default=15)
    sp.add_argument("--checkpoint-interval", type=int, default=3)
    sp.add_argument("--val-metric", default="mrr@10")
    sp.add_argument("--neg-per-query", type=int, default=50)
    sp.add_argument("--resample-negatives", default="epoch", choices=("once", "epoch"))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--pool-sizes", type=_int_list, default=(5, 7, 10, 25),
                    help="two low-range then two high-range pooling sizes")
    sp.add_argument("--gate-hidden", type=int, default=8)
    sp.add_argument("--margin", type=float, default=1.0)
    sp.add_argument("--temperature", type=float, default=0.1)


def build_parser():
    parser = argparse.ArgumentParser(prog="rankforge")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    sp = sub.add_parser("gen-data", help="generate a synthetic ranking dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--dim", type=int, default=16)
    sp.add_argument("--queries", type=int, default=200, help="training queries")
    sp.add_argument("--valid-queries", type=int, default=50)
    sp.add_argument("--test-queries", type=int, default=50)
    sp.add_argument("--pos", type=int, default=1, help="relevant docs per query")
    sp.add_argument("--neg", type=int, default=50, help="non-relevant docs per query")
    sp.add_argument("--distractor-frac", type=float, default=0.3)
    sp.add_argument("--noise", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    commands["gen-data"] = sp

    sp = sub.add_parser("train", help="train one model")
    _add_train_flags(sp)
    commands["train"] = sp

    sp = sub.add_parser("eval", help="rank a test set with a trained model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--qrels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--metrics", default=DEFAULT_EVAL_METRICS)
    sp.add_argument("--run-tag", default="rankforge")
    sp.add_argument("--strip-gates", action="store_true",
                    help="drop gating parameters before scoring (output is unchanged)")
    commands["eval"] = sp

    sp = sub.add_parser("sweep", help="train one model per pooling-size combination")
    _add_train_flags(sp)
    sp.add_argument("--test", required=True)
    sp.add_argument("--combinations", default=None,
                    help="semicolon-separated 1-based indices or explicit a,b,c,d lists; "
                         "default: all 15 standard combinations")
    sp.add_argument("--metrics", default="mrr@10")
    commands["sweep"] = sp

    sp = sub.add_parser("compare", help="train several losses and t-test each pair")
    _add_train_flags(sp)
    sp.add_argument("--test", required=True)
    sp.add_argument("--losses", required=True, help="comma-separated loss names")
    sp.add_argument("--seeds", type=_int_list, default=(0,))
    sp.add_argument("--primary-metric", default="mrr@10")
    sp.add_argument("--metrics", default="mrr@10,ndcg@10,map")
    commands["compare"] = sp
    return parser, commands


def load_config_file(path):
    """Flat 'key = value' text; '#' starts a comment. Keys may use dashes,
    dots, or module prefixes (expertrank.pool_sizes -> pool_sizes)."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip().lower()
            for prefix in ("expertrank.", "trainer.", "dataio."):
                if key.startswith(prefix):
                    key = key[len(prefix):]
            key = key.replace("-", "_").replace(".", "_")
            values[key] = value.strip()
    return values


def _apply_config_file(argv, commands):
    """Pre-scan argv for the command and --config, then install the file's
    values as that subparser's defaults (typed like the matching flag)."""
    command = next((tok for tok in argv if tok in commands), None)
    cfg_path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif tok.startswith("--config="):
            cfg_path = tok.split("=", 1)[1]
    if not (command and cfg_path):
        return
    values = load_config_file(cfg_path)
    sp = commands[command]
    by_dest = {action.dest: action for action in sp._actions}
    defaults = {}
    for key, raw in values.items():
        action = by_dest.get(key)
        if action is None:
            raise ConfigError(f"config key {key!r} is not a flag of {command!r}")
        defaults[key] = action.type(raw) if action.type else raw
    sp.set_defaults(**defaults)


def _ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_gen_data(args):
    spec = SyntheticSpec(
        dim=args.dim, train_queries=args.queries, valid_queries=args.valid_queries,
        test_queries=args.test_queries, pos_per_query=args.pos, neg_per_query=args.neg,
        distractor_frac=args.distractor_frac, noise_sd=args.noise, seed=args.seed,
    )
    train_l, valid_l, test_l, qrels = generate_synthetic(spec)
    out = _ensure_outdir(args.out)
    write_feature_file(os.path.join(out, "train.txt"), train_l)
    write_feature_file(os.path.join(out, "valid.txt"), valid_l)
    write_feature_file(os.path.join(out, "test.txt"), test_l)
    write_qrels(os.path.join(out, "qrels.txt"), qrels)
    print(f"wrote {len(train_l)}/{len(valid_l)}/{len(test_l)} train/valid/test queries to {out}")
    return 0


def _train_config(args):
    return TrainConfig(
        loss=args.loss, scorer=args.scorer, hidden=args.hidden, lr=args.lr,
        epochs=args.epochs, checkpoint_interval=args.checkpoint_interval,
        val_metric=args.val_metric, neg_per_query=args.neg_per_query,
        resample_negatives=args.resample_negatives, seed=args.seed,
        pool_sizes=args.pool_sizes, gate_hidden=args.gate_hidden,
        margin=args.margin, temperature=args.temperature,
    )


def _load_training_data(args):
    train_lists = parse_feature_file(args.train)
    valid_lists = parse_feature_file(args.valid)
    qrels = parse_qrels(args.qrels)
    return train_lists, valid_lists, qrels


def cmd_train(args):
    config = _train_config(args)
    train_lists, valid_lists, qrels = _load_training_data(args)
    result = train(config, train_lists, valid_lists, qrels)
    out = _ensure_outdir(args.out)
    best_store = restore_checkpoint(result.best)
    meta = {
        "loss": config.loss,
        "seed": config.seed,
        "pool_sizes": list(config.pool_sizes),
        "gate_hidden": config.gate_hidden,
        "epoch": result.best.epoch,
        "val_metric": config.val_metric,
        "val_value": result.best.val_value,
    }
    save_model(os.path.join(out, "model.json"), result.scorer, best_store, meta)
    with open(os.path.join(out, "training.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.log_lines) + "\n")
    print(f"best checkpoint: epoch {result.best.epoch}, "
          f"val_{config.val_metric} {result.best.val_value:.6f}")
    return 0


def cmd_eval(args):
    scorer, store, meta = load_model(args.model)
    if args.strip_gates:
        store = strip_gate_params(store)
    test_lists = parse_feature_file(args.test)
    qrels = parse_qrels(args.qrels)
    run = build_run(scorer, store, test_lists)
    out = _ensure_outdir(args.out)
    write_run(os.path.join(out, "run.txt"), run, tag=args.run_tag)
    metric_specs = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report = evaluate_run({q: [d for d, _ in docs] for q, docs in run.items()}, qrels, metric_specs)
    with open(os.path.join(out, "report.tsv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_tsv())
    for key in report.metric_keys:
        print(f"{key}\t{report.aggregates[key]:.6f}")
    return 0


def cmd_sweep(args):
    config = _train_config(args)
    train_lists, valid_lists, qrels = _load_training_data(args)
    test_lists = parse_feature_file(args.test)
    combos = _parse_combinations(args.combinations) if args.combinations else SWEEP_COMBINATIONS
    metric_specs = [m.strip() for m in args.metrics.split(",") if m.strip()]
    rows = sweep_pool_sizes(config, combos, train_lists, valid_lists, test_lists, qrels, metric_specs)
    out = _ensure_outdir(args.out)
    keys = list(rows[0]["metrics"]) if rows else []
    lines = ["combination\t" + "\t".join(keys) + "\tbest"]
    for row in rows:
        combo = ",".join(str(p) for p in row["combination"])
        vals = "\t".join(f"{row['metrics'][k]:.6f}" for k in keys)
        lines.append(f"{combo}\t{vals}\t{'*' if row['best'] else ''}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "sweep.tsv"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_compare(args):
    config = _train_config(args)
    loss_names = [tok.strip() for tok in args.losses.split(",") if tok.strip()]
    train_lists, valid_lists, qrels = _load_training_data(args)
    test_lists = parse_feature_file(args.test)
    metric_specs = [m.strip() for m in args.metrics.split(",") if m.strip()]
    outcome = compare_losses(config, loss_names, args.seeds, train_lists, valid_lists,
                             test_lists, qrels, args.primary_metric, metric_specs)
    out = _ensure_outdir(args.out)
    keys = list(outcome["rows"][0]["metrics"]) if outcome["rows"] else []
    lines = ["loss\tseed\tbest_epoch\t" + "\t".join(keys)]
    for row in outcome["rows"]:
        vals = "\t".join(f"{row['metrics'][k]:.6f}" for k in keys)
        lines.append(f"{row['loss']}\t{row['seed']}\t{row['best_epoch']}\t{vals}")
    with open(os.path.join(out, "compare.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    tlines = ["loss_a\tloss_b\tt\tp\tsignificant\tdegenerate"]
    for tt in outcome["ttests"]:
        if tt["degenerate"]:
            tlines.append(f"{tt['loss_a']}\t{tt['loss_b']}\tNA\tNA\tno\tyes")
        else:
            sig = "yes" if tt["significant"] else "no"
            tlines.append(f"{tt['loss_a']}\t{tt['loss_b']}\t{tt['t']:.6f}\t{tt['p']:.6g}\t{sig}\tno")
    ttext = "\n".join(tlines) + "\n"
    with open(os.path.join(out, "ttests.tsv"), "w", encoding="utf-8") as fh:
        fh.write(ttext)
    print(ttext, end="")
    return 0


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        _apply_config_file(argv, commands)
        args = parser.parse_args(argv)
        return _DISPATCH[args.command](args)
    except RankforgeError as exc:
        print(f"rankforge: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
