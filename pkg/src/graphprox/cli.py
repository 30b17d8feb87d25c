"""``graphprox`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, GraphProxError, ValidationError
from .evaluation import (
    accuracy,
    evaluate_ranking,
    evaluate_scores,
    logreg_train,
    project_2d,
    read_embeddings_csv,
    scatter_svg,
    write_embeddings_csv,
    write_projection_csv,
    write_rankings_csv,
)
from .ged import ALGOS, DEFAULT_BEAM_WIDTH, PairTable, ground_truth_pairs
from .graph import Dataset, FamilySpec, LabelVocab, SplitSpec, load_dataset, save_dataset, split_dataset, synth_generate
from .model import ModelConfig, embed_graphs, load_params, save_params
from .selfcheck import self_check
from .training import TrainConfig, corpus_vocab, feature_width, train

log = logging.getLogger("graphprox")

LOGREG_DEFAULTS = {"l2": 1e-3, "epochs": 500, "lr": 0.5}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated ratios, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("split needs exactly three ratios")
    return parts


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graphprox", description="Unsupervised graph embeddings trained to preserve graph edit distance.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic JSONL corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", action="append", required=True, metavar="FAMILY:COUNT:LO..HI[:LABELS]")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("ged", help="label graph pairs with GED and write a pair table")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--algo", choices=ALGOS, default="ensemble")
    s.add_argument("--beam-width", type=int, default=DEFAULT_BEAM_WIDTH)
    s.add_argument("--pair-budget", type=int, default=None)
    s.add_argument("--solvers", default="beam,bipartite", help="ensemble members (astar,beam,bipartite)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("train", help="train an embedding model on a pair table")
    _add_train_flags(s)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--history", help="write TrainHistory CSV here")

    s = sub.add_parser("embed", help="write embeddings CSV for a split")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    s.add_argument("--out", required=True)

    s = sub.add_parser("rank", help="rank a corpus per query and score against ground truth")
    s.add_argument("--pairs", required=True, help="ground-truth pair table")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="checkpoint; queries = test split, corpus = train split")
    src.add_argument("--embeddings", help="embeddings CSV; every row queries all others")
    src.add_argument("--predicted-pairs", help="pair table whose nged column holds predicted distances")
    s.add_argument("--dataset", help="corpus JSONL (required with --model)")
    s.add_argument("--mode", choices=("distance", "similarity", "both"), default="both")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--out", help="rankings CSV (distance mode unless --mode similarity)")
    s.add_argument("--report", help="write the JSON report here as well as to stdout")

    s = sub.add_parser("classify", help="logistic regression on embeddings: train split -> test split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", help="existing checkpoint; otherwise a model is trained first")
    _add_train_flags(s, dataset=False)
    s.add_argument("--l2", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--logreg-lr", type=float)
    s.add_argument("--report")

    s = sub.add_parser("viz", help="2-D projection CSV and SVG scatter")
    s.add_argument("--dataset", required=True)
    vsrc = s.add_mutually_exclusive_group(required=True)
    vsrc.add_argument("--model")
    vsrc.add_argument("--embeddings")
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    s.add_argument("--out-csv", required=True)
    s.add_argument("--out-svg", required=True)

    s = sub.add_parser("check", help="run built-in invariant checks")
    s.add_argument("--seed", type=int, default=0)
    return p


def _add_train_flags(s: argparse.ArgumentParser, dataset: bool = True) -> None:
    if dataset:
        s.add_argument("--dataset", required=True)
    s.add_argument("--pairs", help="ground-truth pair table")
    s.add_argument("--config", help="JSON file with 'model', 'train' and 'logreg' sections")
    s.add_argument("--seed", type=int)
    s.add_argument("--split", type=_ratios, help="train,val,test ratios (default 0.6,0.2,0.2)")
    s.add_argument("--iterations", type=int)
    s.add_argument("--batch-pairs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--loss-mode", choices=("distance", "similarity"))
    s.add_argument("--pooling", choices=("msna", "na_last", "avg", "supersource"))
    s.add_argument("--gin-dims", type=_int_list)
    s.add_argument("--embed-dim", type=int)
    s.add_argument("--fine-tune-start", type=int, help="switch to supervised fine-tuning at this iteration")


# ---------------------------------------------------------------------------
# config resolution: file < flags


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict) or set(cfg) - {"model", "train", "logreg", "seed", "split"}:
        raise ConfigError(f"{path}: expected an object with keys among model, train, logreg, seed, split")
    return cfg


def resolve_seed_split(args, cfg: dict) -> tuple[int, SplitSpec]:
    seed = cfg.get("seed", cfg.get("train", {}).get("seed", 0))
    split = tuple(cfg.get("split", (0.6, 0.2, 0.2)))
    if args.seed is not None:
        seed = args.seed
    if args.split is not None:
        split = args.split
    return int(seed), SplitSpec(split, int(seed))


def resolve_configs(args, cfg: dict, vocab: LabelVocab | None, seed: int) -> tuple[TrainConfig, ModelConfig, dict]:
    """Merge config-file sections with explicit flags (flags win)."""
    train_d = dict(cfg.get("train", {}))
    model_d = dict(cfg.get("model", {}))
    logreg_d = {**LOGREG_DEFAULTS, **cfg.get("logreg", {})}
    for flag, key in (("iterations", "iterations"), ("batch_pairs", "batch_pairs"), ("lr", "lr"),
                      ("loss_mode", "loss_mode")):
        if getattr(args, flag) is not None:
            train_d[key] = getattr(args, flag)
    if args.fine_tune_start is not None:
        train_d["fine_tune"] = {**(train_d.get("fine_tune") or {}), "start_iter": args.fine_tune_start}
    for flag, key in (("pooling", "pooling"), ("gin_dims", "gin_dims"), ("embed_dim", "embed_dim")):
        if getattr(args, flag) is not None:
            model_d[key] = getattr(args, flag)
    for flag, key in (("l2", "l2"), ("epochs", "epochs"), ("logreg_lr", "lr")):
        if getattr(args, flag, None) is not None:
            logreg_d[key] = getattr(args, flag)
    if set(logreg_d) - set(LOGREG_DEFAULTS):
        raise ConfigError(f"unknown logreg config fields: {sorted(set(logreg_d) - set(LOGREG_DEFAULTS))}")
    train_d["seed"] = seed
    model_d.setdefault("in_dim", feature_width(vocab))
    try:
        return TrainConfig.from_dict(train_d), ModelConfig.from_dict(model_d), logreg_d
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# helpers


def _splits_from_extra(ds: Dataset, extra: dict) -> dict[str, Dataset]:
    try:
        parts = {name: ds.subset(extra["splits"][name]) for name in ("train", "val", "test")}
    except KeyError as exc:
        raise ValidationError(f"checkpoint lacks split information ({exc}) or dataset does not match it") from None
    parts["all"] = ds
    return parts


def _vocab_from_extra(extra: dict) -> LabelVocab | None:
    labels = extra.get("vocab")
    return None if labels is None else LabelVocab(tuple(labels))


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
    print(text)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _jsonable(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


def _train_model(args, ds: Dataset):
    cfg = _load_config(args.config)
    seed, split_spec = resolve_seed_split(args, cfg)
    splits = split_dataset(ds, split_spec)
    vocab = corpus_vocab(splits[0])
    tcfg, mcfg, logreg_d = resolve_configs(args, cfg, vocab, seed)
    if not args.pairs:
        raise ConfigError("--pairs is required to train a model")
    pairs = PairTable.from_csv(args.pairs)
    params, history = train(splits, pairs, tcfg, mcfg)
    extra = {
        "seed": seed,
        "split_ratios": list(split_spec.ratios),
        "splits": {name: part.gids for name, part in zip(("train", "val", "test"), splits)},
        "vocab": None if vocab is None else list(vocab.labels),
        "train": tcfg.to_dict(),
    }
    return params, history, extra, logreg_d


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    specs = [FamilySpec.parse(t) for t in args.spec]
    ds = synth_generate(specs, args.seed)
    save_dataset(ds, args.out)
    log.info("wrote %d graphs to %s", len(ds), args.out)
    return 0


def cmd_ged(args) -> int:
    ds = load_dataset(args.dataset)
    solvers = tuple(t for t in args.solvers.split(",") if t)
    table = ground_truth_pairs(ds, args.pair_budget, args.seed, solvers, args.beam_width, args.jobs, args.algo)
    table.to_csv(args.out)
    log.info("labeled %d pairs", len(table))
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    params, history, extra, _ = _train_model(args, ds)
    save_params(params, args.out, extra)
    if args.history:
        history.to_csv(args.history)
    losses = history.losses()
    summary = {"iterations": len(history.entries), "best_iter": history.best_iter,
               "first_loss": losses[0] if losses else None, "last_loss": losses[-1] if losses else None}
    _write_json(summary, None)
    return 0


def cmd_embed(args) -> int:
    params, extra = load_params(args.model)
    ds = load_dataset(args.dataset)
    part = _splits_from_extra(ds, extra)[args.split]
    graphs = list(part)
    h = embed_graphs(params, graphs, _vocab_from_extra(extra))
    write_embeddings_csv([g.gid for g in graphs], h, args.out)
    return 0


def cmd_rank(args) -> int:
    truth = PairTable.from_csv(args.pairs)
    modes = ("distance", "similarity") if args.mode == "both" else (args.mode,)
    reports = {}
    if args.predicted_pairs:
        if args.mode == "similarity":
            raise ConfigError("--predicted-pairs carries distances; use --mode distance")
        pred = PairTable.from_csv(args.predicted_pairs)
        gids = sorted(pred.gids())

        def scorer(q, corpus):
            out = []
            for g in corpus:
                rec = pred.get(q, g)
                if rec is None:
                    raise ValidationError(f"no predicted score for pair ({q}, {g})")
                out.append(rec.nged)
            return np.array(out)

        modes = ("distance",)
        reports["distance"] = evaluate_scores(gids, gids, scorer, truth, "distance", args.k)
    else:
        if args.model:
            if not args.dataset:
                raise ConfigError("--dataset is required with --model")
            params, extra = load_params(args.model)
            parts = _splits_from_extra(load_dataset(args.dataset), extra)
            vocab = _vocab_from_extra(extra)
            queries, corpus = list(parts["test"]), list(parts["train"])
            q_gids, c_gids = [g.gid for g in queries], [g.gid for g in corpus]
            q_h, c_h = embed_graphs(params, queries, vocab), embed_graphs(params, corpus, vocab)
        else:
            q_gids, q_h = read_embeddings_csv(args.embeddings)
            c_gids, c_h = q_gids, q_h
        for mode in modes:
            reports[mode] = evaluate_ranking(q_gids, q_h, c_gids, c_h, truth, mode, args.k)
    if args.out:
        write_rankings_csv(reports[modes[0]].rankings, args.out)
    _write_json({m: {k: _jsonable(v) for k, v in r.to_dict().items()} for m, r in reports.items()}, args.report)
    return 0


def cmd_classify(args) -> int:
    ds = load_dataset(args.dataset)
    if args.model:
        params, extra = load_params(args.model)
        cfg = _load_config(args.config)
        _, _, logreg_d = resolve_configs(args, cfg, _vocab_from_extra(extra), int(extra.get("seed", 0)))
    else:
        params, _, extra, logreg_d = _train_model(args, ds)
    parts = _splits_from_extra(ds, extra)
    vocab = _vocab_from_extra(extra)
    tr, te = list(parts["train"]), list(parts["test"])
    for g in tr + te:
        if g.glabel is None:
            raise ValidationError(f"graph {g.gid} has no class label")
    h_tr, h_te = embed_graphs(params, tr, vocab), embed_graphs(params, te, vocab)
    clf = logreg_train(h_tr, [g.glabel for g in tr], logreg_d["l2"], int(logreg_d["epochs"]), logreg_d["lr"],
                       int(extra.get("seed", 0)))
    report = {
        "accuracy": accuracy(clf, h_te, [g.glabel for g in te]),
        "train_accuracy": accuracy(clf, h_tr, [g.glabel for g in tr]),
        "classes": list(clf.classes),
        "n_train": len(tr),
        "n_test": len(te),
        "fine_tuned": params.classes is not None,
    }
    _write_json(report, args.report)
    return 0


def cmd_viz(args) -> int:
    ds = load_dataset(args.dataset)
    if args.model:
        params, extra = load_params(args.model)
        graphs = list(_splits_from_extra(ds, extra)[args.split])
        gids = [g.gid for g in graphs]
        h = embed_graphs(params, graphs, _vocab_from_extra(extra))
    else:
        gids, h = read_embeddings_csv(args.embeddings)
    coords, degenerate = project_2d(h)
    if degenerate:
        log.warning("all embeddings coincide; projection is all zeros")
    write_projection_csv(gids, coords, args.out_csv)
    labels = [ds[g].glabel if g in ds else None for g in gids]
    Path(args.out_svg).write_text(scatter_svg(gids, coords, labels), encoding="utf-8")
    return 0


def cmd_check(args) -> int:
    report = self_check(seed=args.seed)
    for line in report.lines():
        print(line)
    if not report.passed:
        print(f"error: check: failed {', '.join(report.failed())}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "synth": cmd_synth, "ged": cmd_ged, "train": cmd_train, "embed": cmd_embed, "rank": cmd_rank,
    "classify": cmd_classify, "viz": cmd_viz, "check": cmd_check,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except GraphProxError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: io: {exc.strerror or exc}: {exc.filename or ''}".rstrip(": "), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
