"""Command-line entry points.

Subcommands: train, predict, evaluate, prune, gensynth, gradcheck.
Configuration comes from a JSON file plus flag overrides; every command
is deterministic given its config and seed. Exit codes: 0 success,
1 runtime/model error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evaluation, synthgen, training
from .baseline_ffnn import interpolate, tune_alpha
from .context_features import FeatureStandardizer
from .evaluation import CommentPrediction, KarmaQuantizer
from .graph_lstm import decode_params, encode_params, load_checkpoint, save_checkpoint
from .pruner import LinearPruneClassifier, prune, pruning_report_rows
from .text_features import Vocabulary
from .thread_graph import load_corpus, load_thread
from .training import Artifacts, TrainConfig

MODES = ("graph_bi", "graph_fwd", "node_indep", "interp")


class UsageError(ValueError):
    pass


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"malformed config {path}: {e.msg}")


def _require_dir(path, what: str):
    if path is None:
        raise UsageError(f"{what} path not given")
    if not os.path.isdir(path):
        raise UsageError(f"{what} path not found: {path}")
    return path


def _corpus(path, what: str):
    threads = load_corpus(_require_dir(path, what))
    if not threads:
        raise UsageError(f"{what} directory {path} holds no .jsonl threads")
    return threads


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_KEYS = {
    "mode",
    "train_dir",
    "dev_dir",
    "out_dir",
    "use_text",
    "pruning",
    "hidden_dims",
    "epochs",
    "patience",
    "seed",
    "rho",
    "eps",
    "init_scale",
    "d_emb",
    "min_count",
    "grad_clip",
    "workers",
    "round_size",
    "embeddings_path",
    "checkpoint_a",
    "checkpoint_b",
    "vocab_a",
    "vocab_b",
    "quantizer",
}


def _train_settings(args) -> dict:
    cfg = dict(_load_json(args.config)) if args.config else {}
    unknown = sorted(set(cfg) - _TRAIN_KEYS)
    if unknown:
        raise UsageError("unknown config keys: " + ", ".join(unknown))
    for key in (
        "mode",
        "train_dir",
        "dev_dir",
        "out_dir",
        "epochs",
        "patience",
        "seed",
        "workers",
        "d_emb",
        "embeddings_path",
    ):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if args.hidden_dims is not None:
        cfg["hidden_dims"] = [int(s) for s in args.hidden_dims.split(",") if s]
    if args.use_text is not None:
        cfg["use_text"] = args.use_text
    if args.pruning is not None:
        cfg["pruning"] = args.pruning
    cfg.setdefault("mode", "graph_bi")
    if cfg["mode"] not in MODES:
        raise UsageError(f"unknown mode {cfg['mode']!r}")
    return cfg


def _cmd_train(args) -> int:
    cfg = _train_settings(args)
    out_dir = cfg.get("out_dir")
    if out_dir is None:
        raise UsageError("out_dir not given")
    os.makedirs(out_dir, exist_ok=True)
    if cfg["mode"] == "interp":
        return _train_interp(cfg, out_dir)

    train_threads = _corpus(cfg.get("train_dir"), "train")
    dev_threads = _corpus(cfg.get("dev_dir"), "dev")
    tc_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    tc_kwargs = {k: v for k, v in cfg.items() if k in tc_fields}
    tc_kwargs["model"] = cfg["mode"]
    try:
        config = TrainConfig(**tc_kwargs)
    except ValueError as e:
        raise UsageError(str(e))

    result = training.train(train_threads, dev_threads, config)

    save_checkpoint(
        os.path.join(out_dir, "checkpoint.json"),
        cfg["mode"],
        result.params,
        result.checkpoint_meta(),
    )
    result.artifacts.quantizer.save(os.path.join(out_dir, "quantizer.json"))
    with open(os.path.join(out_dir, "standardizer.json"), "w", encoding="utf-8") as fh:
        json.dump(result.artifacts.standardizer.to_json_obj(), fh)
        fh.write("\n")
    if result.artifacts.vocab is not None:
        result.artifacts.vocab.save(os.path.join(out_dir, "vocab.txt"))
    if result.artifacts.pruner is not None:
        result.artifacts.pruner.save(os.path.join(out_dir, "pruner.json"))
    with open(os.path.join(out_dir, "log.csv"), "w", encoding="utf-8") as fh:
        fh.write(training.log_csv(result.log_rows))
    print(
        f"trained {cfg['mode']} (d_h={result.d_h}, best epoch {result.best_epoch}): "
        f"dev macro F1 {result.dev_macro_f1:.4f}, weighted F1 {result.dev_weighted_f1:.4f}"
    )
    return 0


def _load_model_bundle(checkpoint_path, vocab_path):
    kind, params, meta = load_checkpoint(checkpoint_path)
    vocab = None
    if meta.get("use_text"):
        if vocab_path is None:
            raise UsageError(f"checkpoint {checkpoint_path} needs --vocab")
        vocab = Vocabulary.load(vocab_path)
        if vocab.sha256() != meta.get("vocab_sha256"):
            raise RuntimeError(
                f"vocabulary hash mismatch between {vocab_path} and checkpoint "
                f"{checkpoint_path}"
            )
    return kind, params, meta, vocab


def _bundle_artifacts(meta, vocab) -> Artifacts:
    clf = None
    if meta.get("pruner"):
        clf = LinearPruneClassifier.from_json_obj(meta["pruner"])
    return Artifacts(
        quantizer=KarmaQuantizer(thresholds=(1,) * 7),  # labels unused at predict time
        standardizer=FeatureStandardizer.from_json_obj(meta["standardizer"]),
        vocab=vocab,
        pruner=clf,
    )


def _predict_config(kind, meta) -> TrainConfig:
    return TrainConfig(
        model=kind,
        hidden_dims=(meta["d_h"],),
        use_text=bool(meta.get("use_text")),
        d_emb=int(meta.get("d_emb") or 0) or 100,
        epochs=1,
    )


def _train_interp(cfg, out_dir) -> int:
    for key in ("checkpoint_a", "checkpoint_b", "dev_dir", "quantizer"):
        if not cfg.get(key):
            raise UsageError(f"interp mode needs {key}")
    dev_threads = _corpus(cfg.get("dev_dir"), "dev")
    quantizer = KarmaQuantizer.load(cfg["quantizer"])
    sides = {}
    for tag in ("a", "b"):
        kind, params, meta, vocab = _load_model_bundle(
            cfg[f"checkpoint_{tag}"], cfg.get(f"vocab_{tag}")
        )
        if kind == "interp":
            raise UsageError("interp checkpoints can not be nested")
        sides[tag] = (kind, params, meta, vocab)

    labels = []
    prob_sides = {"a": [], "b": []}
    for tree in dev_threads:
        per_side = {}
        for tag in ("a", "b"):
            kind, params, meta, vocab = sides[tag]
            per_side[tag] = _predict_one_thread(tree, kind, params, meta, vocab)
        for i in tree.chrono:
            if i == tree.root:
                continue
            labels.append(quantizer.level(tree.nodes[i].karma))
            for tag in ("a", "b"):
                prob_sides[tag].append(per_side[tag][i][0])
    alpha = tune_alpha(np.array(prob_sides["a"]), np.array(prob_sides["b"]), labels)

    meta = {
        "alpha": alpha,
        "a": _embed_side(sides["a"]),
        "b": _embed_side(sides["b"]),
    }
    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), "interp", {}, meta)
    print(f"tuned interpolation weight alpha={alpha}")
    return 0


def _embed_side(side) -> dict:
    kind, params, meta, vocab = side
    return {
        "kind": kind,
        "meta": meta,
        "params": encode_params(params),
        "vocab_lines": vocab.to_lines() if vocab is not None else None,
    }


def _restore_side(obj):
    vocab = None
    if obj.get("vocab_lines") is not None:
        tokens = obj["vocab_lines"]
        vocab = Vocabulary(
            token_to_index={t: k for k, t in enumerate(tokens)},
            unk_index=tokens.index("<unk>"),
        )
    return obj["kind"], decode_params(obj["params"]), obj["meta"], vocab


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def _predict_one_thread(tree, kind, params, meta, vocab) -> dict:
    """id -> (probs, pruned_flag) for every non-root comment."""
    artifacts = _bundle_artifacts(meta, vocab)
    config = _predict_config(kind, meta)
    compiled = training.prepare_thread(tree, artifacts, config)
    ids, probs = training.predict_compiled(compiled, params, config)
    out = {i: (probs[k], False) for k, i in enumerate(ids)}
    level0 = np.zeros(evaluation.N_LEVELS)
    level0[0] = 1.0
    for i in compiled.pruned_ids:
        out[i] = (level0, True)
    return out


def _cmd_predict(args) -> int:
    kind, params, meta = load_checkpoint(args.checkpoint)
    if kind == "interp":
        side_a = _restore_side(meta["a"])
        side_b = _restore_side(meta["b"])
        alpha = float(meta["alpha"])
    else:
        _, params, meta, vocab = _load_model_bundle(args.checkpoint, args.vocab)

    if os.path.isdir(args.input):
        threads = _corpus(args.input, "input")
    elif os.path.isfile(args.input):
        threads = [load_thread(args.input)]
    else:
        raise UsageError(f"input path not found: {args.input}")

    rows = []
    for tree in threads:
        if kind == "interp":
            out_a = _predict_one_thread(tree, *side_a)
            out_b = _predict_one_thread(tree, *side_b)
            merged = {}
            for i in out_a:
                merged[i] = (interpolate(out_a[i][0], out_b[i][0], alpha), False)
        else:
            merged = _predict_one_thread(tree, kind, params, meta, vocab)
        for i in tree.chrono:
            if i == tree.root:
                continue
            probs, pruned_flag = merged[i]
            rows.append(
                {
                    "id": i,
                    "probs": [float(p) for p in probs],
                    "level": 0 if pruned_flag else int(np.argmax(probs)),
                    "pruned": bool(pruned_flag),
                }
            )
    with open(args.output, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")
    print(f"wrote {len(rows)} predictions to {args.output}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _cmd_evaluate(args) -> int:
    if not os.path.isfile(args.predictions):
        raise UsageError(f"predictions file not found: {args.predictions}")
    preds = []
    with open(args.predictions, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            preds.append(
                CommentPrediction(
                    comment_id=obj["id"],
                    probs=np.asarray(obj["probs"], dtype=np.float64),
                    pruned=bool(obj["pruned"]),
                )
            )
    threads = _corpus(args.threads, "threads")
    quantizer = KarmaQuantizer.load(args.quantizer)
    true_levels = {}
    n_previous = {}
    for tree in threads:
        for k, i in enumerate(tree.chrono):
            if i == tree.root:
                continue
            true_levels[i] = quantizer.level(tree.nodes[i].karma)
            n_previous[i] = k
    report = evaluation.evaluate(preds, true_levels, n_previous)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(os.path.join(args.out_dir, "time_curve.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.time_curve_csv())
    with open(os.path.join(args.out_dir, "confusion.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.confusion_csv())
    print(f"macro F1 {report.macro_f1:.4f}, weighted F1 {report.weighted_f1:.4f}")
    return 0


# ---------------------------------------------------------------------------
# prune
# ---------------------------------------------------------------------------


def _cmd_prune(args) -> int:
    clf = LinearPruneClassifier.load(args.pruner)
    with open(args.standardizer, "r", encoding="utf-8") as fh:
        standardizer = FeatureStandardizer.from_json_obj(json.load(fh))
    threads = _corpus(args.threads, "threads")
    from .context_features import context_matrix

    pruned_trees = []
    for tree in threads:
        ids, mat = context_matrix(tree)
        dec = clf.decision(standardizer.apply(mat))
        flags = {i: bool(dec[k] > 0.0) for k, i in enumerate(ids) if i != tree.root}
        pruned_trees.append(prune(tree, flags))
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write("thread_id,n_total,n_pruned,fraction\n")
        for tid, total, n_pruned, fraction in pruning_report_rows(pruned_trees):
            fh.write(f"{tid},{total},{n_pruned},{fraction!r}\n")
    print(f"wrote pruning report for {len(pruned_trees)} threads to {args.output}")
    return 0


# ---------------------------------------------------------------------------
# gensynth / gradcheck
# ---------------------------------------------------------------------------


def _cmd_gensynth(args) -> int:
    cfg = dict(_load_json(args.config)) if args.config else {}
    splits = cfg.pop("splits", None)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["n_threads"] = args.threads
    if args.splits is not None:
        splits = [int(s) for s in args.splits.split(",")]
    field_names = {f.name for f in dataclasses.fields(synthgen.SynthConfig)}
    unknown = sorted(set(cfg) - field_names)
    if unknown:
        raise UsageError("unknown synth config keys: " + ", ".join(unknown))
    try:
        base = synthgen.SynthConfig(**cfg)
    except ValueError as e:
        raise UsageError(str(e))
    os.makedirs(args.out, exist_ok=True)
    if splits is None:
        n = len(synthgen.write_corpus(synthgen.generate(base), args.out))
        print(f"wrote {n} threads to {args.out}")
    else:
        if len(splits) != 3:
            raise UsageError("--splits needs three comma-separated counts")
        for name, count, offset in zip(("train", "dev", "test"), splits, (0, 1, 2)):
            part = dataclasses.replace(base, n_threads=count, seed=base.seed * 3 + offset)
            n = len(synthgen.write_corpus(synthgen.generate(part), os.path.join(args.out, name)))
            print(f"wrote {n} threads to {os.path.join(args.out, name)}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = training.gradcheck(trials=args.trials, seed=args.seed, tolerance=args.tolerance)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threadkarma",
        description="Graph-structured LSTM for comment popularity prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model (or tune an interpolation)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--train-dir", dest="train_dir")
    p.add_argument("--dev-dir", dest="dev_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--hidden-dims", dest="hidden_dims", help="comma separated, e.g. 16,32")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--d-emb", dest="d_emb", type=int)
    p.add_argument("--embeddings", dest="embeddings_path")
    p.add_argument("--use-text", dest="use_text", action="store_true", default=None)
    p.add_argument("--no-text", dest="use_text", action="store_false", default=None)
    p.add_argument("--pruning", dest="pruning", action="store_true", default=None)
    p.add_argument("--no-pruning", dest="pruning", action="store_false", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score threads with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--input", required=True, help="thread file or directory")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against labeled threads")
    p.add_argument("--predictions", required=True)
    p.add_argument("--threads", required=True)
    p.add_argument("--quantizer", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("prune", help="apply a pruning classifier, write the report")
    p.add_argument("--pruner", required=True)
    p.add_argument("--standardizer", required=True)
    p.add_argument("--threads", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("gensynth", help="generate a synthetic corpus")
    p.add_argument("--config", help="JSON SynthConfig")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--splits", help="train,dev,test thread counts")
    p.set_defaults(func=_cmd_gensynth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime/model failures
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
