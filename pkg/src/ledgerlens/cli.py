"""Command line entry point: ``ledgerlens {generate,train,score,evaluate,sweep}``.

Machine-readable output goes to files (and JSON summaries to stdout);
progress and tables go to stderr. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from statistics import mean, pstdev

import numpy as np

from . import baselines, metrics, nn, scoring
from .data import AttributeVocabulary, Label, build_vocabulary, load_csv, one_hot_encode, write_csv
from .errors import ConfigError, DataError, LedgerLensError
from .synthgen import GeneratorConfig, generate

log = logging.getLogger("ledgerlens")

SEED_ENV = "LEDGERLENS_SEED"


def _fmt(x: float) -> str:
    return format(x, ".17g")


def parse_int_list(text: str) -> list[int]:
    """``"1,2,5"`` or ``"1-5"`` (inclusive) into a list of ints."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if re.fullmatch(r"\d+-\d+", part):
                lo, hi = part.split("-")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigError(f"cannot parse integer list {text!r}") from None
    if not out:
        raise ConfigError(f"empty integer list {text!r}")
    return out


def _seeds(args) -> list[int]:
    if args.seed is not None:
        return parse_int_list(args.seed)
    return parse_int_list(os.environ.get(SEED_ENV, "0"))


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _load_dataset(path, vocab: AttributeVocabulary | None = None):
    attributes, entries = load_csv(path)
    if vocab is None:
        vocab = build_vocabulary(entries, attributes)
    elif tuple(attributes) != vocab.attributes:
        raise ConfigError(f"dataset attributes {attributes} do not match the model's "
                          f"{list(vocab.attributes)}")
    return entries, one_hot_encode(entries, vocab)


# generate ------------------------------------------------------------------

def cmd_generate(args) -> int:
    config = GeneratorConfig.load(args.config) if args.config else GeneratorConfig.default()
    if args.seed is not None or SEED_ENV in os.environ:
        config = config.replace(seed=_seeds(args)[0])
    entries = generate(config)
    vocab = build_vocabulary(entries, config.attribute_names)
    out = _out_dir(args)
    path = out / "dataset.csv"
    write_csv(path, config.attribute_names, entries)
    (out / "generator_config.json").write_text(json.dumps(config.to_json(), indent=1) + "\n")
    summary = {
        "path": str(path),
        "rows": len(entries),
        "attributes": len(config.attributes),
        "dim": vocab.dim,
        "regular_dim": config.dim,
        "regular": sum(e.label is Label.REGULAR for e in entries),
        "global": sum(e.label is Label.GLOBAL for e in entries),
        "local": sum(e.label is Label.LOCAL for e in entries),
        "seed": config.seed,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


# train ---------------------------------------------------------------------

def _train_config(args, seed: int) -> nn.TrainConfig:
    return nn.TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                          max_epochs=args.epochs, seed=seed, patience=args.patience,
                          min_rel_improvement=args.min_improvement)


def write_trace(path, trace: nn.TrainTrace, attributes) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"] + [f"loss_{a}" for a in attributes])
        for epoch, (loss, per_attr) in enumerate(zip(trace.epoch_loss, trace.attribute_loss), 1):
            w.writerow([epoch, _fmt(loss)] + [_fmt(v) for v in per_attr])


def write_latents(path, matrix, z: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entry_id", "label"] + [f"z{i + 1}" for i in range(z.shape[1])])
        for eid, lab, row in zip(matrix.entry_ids, matrix.labels, z):
            w.writerow([eid, lab.value] + [_fmt(v) for v in row])


def cmd_train(args) -> int:
    entries, matrix = _load_dataset(args.dataset)
    spec = nn.LayerSpec.parse(args.arch, matrix.dim, args.slope)
    seeds = _seeds(args)
    configs = [_train_config(args, s) for s in seeds]
    latent_epochs = set(parse_int_list(args.latent_epochs)) if args.latent_epochs else set()
    out = _out_dir(args)
    tag = args.arch.strip().upper() if args.arch.strip().upper().startswith("AE") else "custom"
    for config in configs:
        stem = f"{tag}_s{config.seed}"

        def snapshot(epoch, params, stem=stem):
            if epoch in latent_epochs:
                write_latents(out / f"latent_{stem}_e{epoch}.csv", matrix,
                              nn.encode(params, spec, matrix.x))

        log.info("training %s seed %d on %d x %d", spec.layer_sizes, config.seed, matrix.n, matrix.dim)
        params, trace = nn.train(matrix, spec, config, callback=snapshot)
        nn.save_checkpoint(out / f"model_{stem}.json",
                           nn.Checkpoint(spec, params, config, trace.stopped_epoch, matrix.vocab.to_json()))
        write_trace(out / f"trace_{stem}.csv", trace, matrix.vocab.attributes)
        log.info("seed %d stopped at epoch %d, loss %.6f", config.seed, trace.stopped_epoch,
                 trace.epoch_loss[-1])
    print(json.dumps({"arch": list(spec.layer_sizes), "seeds": seeds, "out": str(out)}))
    return 0


# score ---------------------------------------------------------------------

def cmd_score(args) -> int:
    for name in ("alpha", "beta"):
        if not 0.0 <= getattr(args, name) <= 1.0:
            raise ConfigError(f"--{name} must lie in [0, 1]")
    if not 0.0 < args.tau < 1.0:
        raise ConfigError("--tau must lie in (0, 1)")
    ckpt = nn.load_checkpoint(args.model)
    vocab = AttributeVocabulary.from_json(ckpt.vocabulary) if ckpt.vocabulary else None
    try:
        entries, matrix = _load_dataset(args.dataset, vocab)
    except DataError as exc:
        if vocab is None:
            raise
        raise ConfigError(f"dataset does not match the model vocabulary: {exc}") from None
    if matrix.dim != ckpt.spec.input_dim:
        raise ConfigError(f"model expects D={ckpt.spec.input_dim}, dataset encodes to D={matrix.dim}")
    errors = nn.reconstruction_error(ckpt.params, ckpt.spec, matrix.x)
    records = scoring.score_population(entries, errors, args.alpha, args.beta, args.tau, args.mode)
    out = _out_dir(args)
    scoring.write_scores_csv(out / "scores.csv", records)
    scoring.write_scores_jsonl(out / "scores.jsonl", records)
    flagged = sum(r.flagged for r in records)
    print(json.dumps({"rows": len(records), "flagged": flagged, "out": str(out / "scores.csv")}))
    return 0


# evaluate ------------------------------------------------------------------

def _score_vector(records, column: str) -> np.ndarray:
    return np.array([getattr(r, column) for r in records], dtype=np.float64)


def evaluate_records(records, labels, column: str = "AS", k: int | None = None) -> dict:
    scores = _score_vector(records, column)
    flags = np.array([r.flagged for r in records], dtype=bool)
    # effective cut of the stored flags: the smallest flagged score
    cut = float(scores[flags].min()) if flags.any() else None
    reports = {"beta": metrics.report_at(scores, labels, cut, k, flags=flags)}
    _, reports["recall100"] = metrics.recall100_operating_point(scores, labels, k)
    return reports


def cmd_evaluate(args) -> int:
    records = scoring.read_scores_csv(args.scores)
    if not args.labels:
        raise DataError("evaluation needs ground-truth labels (--labels dataset.csv)")
    _, entries = load_csv(args.labels)
    by_id = {e.entry_id: e.label for e in entries}
    try:
        labels = [by_id[r.entry_id] for r in records]
    except KeyError as exc:
        raise DataError(f"score entry {exc.args[0]} has no label in {args.labels}") from None
    if any(lab is Label.UNLABELED for lab in labels):
        raise DataError(f"{args.labels} has unlabeled entries; evaluation requires ground truth")
    if args.score not in ("AS", "RE", "E"):
        raise ConfigError("--score must be AS, RE or E")
    reports = evaluate_records(records, labels, args.score, args.k)
    out = _out_dir(args)
    metrics.dump_reports(out / "report.json", reports)
    print(metrics.format_table([(f"{args.score} @ beta", reports["beta"]),
                                (f"{args.score} @ recall 100%", reports["recall100"])]),
          file=sys.stderr)
    print(json.dumps({k: v.to_json() for k, v in reports.items()}, sort_keys=True))
    return 0


# sweep ---------------------------------------------------------------------

def _sweep_leg(task):
    path, arch, seed, train_kwargs = task
    entries, matrix = _load_dataset(path)
    spec = nn.LayerSpec.parse(arch, matrix.dim)
    params, trace = nn.train(matrix, spec, nn.TrainConfig(seed=seed, **train_kwargs))
    errors = nn.reconstruction_error(params, spec, matrix.x)
    records = scoring.score_population(entries, errors)
    row = {"model": arch, "seed": seed, "epochs": trace.stopped_epoch, "loss": trace.epoch_loss[-1]}
    for column in ("RE", "AS"):
        _, rep = metrics.recall100_operating_point(_score_vector(records, column), matrix.labels)
        row.update({f"{column}_{key}": val for key, val in rep.to_json().items() if key != "class_recall"})
    return row


def baseline_reports(matrix, pca_cs=(5, 10, 20, 30), lof_ks=(10, 50)) -> list[dict]:
    rows = []
    for c in pca_cs:
        score = baselines.pca_score(baselines.pca_fit(matrix.x, c), matrix.x)
        _, rep = metrics.recall100_operating_point(score, matrix.labels)
        rows.append({"model": f"PCA(c={c})", "detector": "pca", "param": c, "scores": score, "report": rep})
    for k in lof_ks:
        score = baselines.lof_scores(matrix.x, k)
        _, rep = metrics.recall100_operating_point(score, matrix.labels)
        rows.append({"model": f"LOF(k={k})", "detector": "lof", "param": k, "scores": score, "report": rep})
    return rows


def cmd_sweep(args) -> int:
    entries, matrix = _load_dataset(args.dataset)
    archs = [a.strip() for a in args.arch.split(",") if a.strip()]
    for a in archs:
        nn.LayerSpec.parse(a, matrix.dim)
    seeds = _seeds(args)
    out = _out_dir(args)
    train_kwargs = {"max_epochs": args.epochs, "learning_rate": args.lr, "batch_size": args.batch_size,
                    "patience": args.patience, "min_rel_improvement": args.min_improvement}
    tasks = [(str(args.dataset), a, s, train_kwargs) for a in archs for s in seeds]
    legs = []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_sweep_leg, t) for t in tasks]
            for task, fut in zip(tasks, futures):
                try:
                    legs.append(fut.result())
                except LedgerLensError as exc:
                    log.error("leg %s seed %s failed: %s", task[1], task[2], exc)
    else:
        for task in tasks:
            try:
                legs.append(_sweep_leg(task))
                log.info("leg %s seed %s done", task[1], task[2])
            except LedgerLensError as exc:
                log.error("leg %s seed %s failed: %s", task[1], task[2], exc)

    aggregate = []
    for a in archs:
        rows = [r for r in legs if r["model"] == a]
        if not rows:
            continue
        agg = {"model": a, "runs": len(rows)}
        for key in ("RE_flagged_count", "RE_precision", "RE_f1", "RE_top_k_precision", "RE_roc_auc",
                    "AS_flagged_count", "AS_precision", "AS_f1", "AS_roc_auc"):
            vals = [r[key] for r in rows]
            agg[f"{key}_mean"] = mean(vals)
            agg[f"{key}_std"] = pstdev(vals)
        aggregate.append(agg)

    base = [] if args.no_baselines else baseline_reports(matrix, parse_int_list(args.pca_c),
                                                          parse_int_list(args.lof_k))
    for b in base:
        records = scoring.score_population(entries, b["scores"])
        scoring.write_scores_csv(out / f"scores_{b['detector']}_{b['param']}.csv", records,
                                 detector=b["model"])

    with open(out / "sweep_legs.csv", "w", newline="", encoding="utf-8") as fh:
        if legs:
            w = csv.DictWriter(fh, fieldnames=list(legs[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(legs)
    doc = {"legs": legs, "aggregate": aggregate,
           "baselines": [{"model": b["model"], **b["report"].to_json()} for b in base]}
    (out / "sweep.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    table_rows = []
    for a in archs:
        agg = next((g for g in aggregate if g["model"] == a), None)
        if agg:
            table_rows.append((f"{a} (mean of {agg['runs']})", metrics.EvaluationReport(
                agg["RE_precision_mean"], 1.0, agg["RE_f1_mean"], agg["RE_top_k_precision_mean"],
                int(matrix.anomaly_mask.sum()), agg["RE_roc_auc_mean"],
                int(round(agg["RE_flagged_count_mean"])), agg["RE_flagged_count_mean"] / matrix.n,
                float("nan"))))
    table_rows += [(b["model"], b["report"]) for b in base]
    print(metrics.format_table(table_rows), file=sys.stderr)
    print(json.dumps({"legs": len(legs), "failed": len(tasks) - len(legs), "out": str(out)}))
    return 0


# entry point ---------------------------------------------------------------

def _train_flags(p: argparse.ArgumentParser, default_epochs: int) -> None:
    p.add_argument("--epochs", type=int, default=default_epochs, help="maximum training epochs")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--min-improvement", type=float, default=1e-5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ledgerlens", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", "--seeds", "-s", dest="seed", help=f"seed or list (1,2,3 / 1-5); default ${SEED_ENV} or 0")
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("generate", help="write a synthetic labelled dataset")
    p.add_argument("--config", help="generator config JSON (default: bundled)")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train autoencoder(s), write checkpoints and traces")
    p.add_argument("dataset")
    p.add_argument("--arch", default="AE3", help="AE1..AE9 or explicit sizes like 81-8-3-8-81")
    p.add_argument("--slope", type=float, default=0.4, help="leaky ReLU slope")
    p.add_argument("--latent-epochs", help="epochs at which to dump latent activations")
    _train_flags(p, 2000)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a dataset with a trained model")
    p.add_argument("dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float, default=scoring.DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=scoring.DEFAULT_BETA)
    p.add_argument("--tau", type=float, default=scoring.DEFAULT_TAU)
    p.add_argument("--mode", choices=[m.value for m in scoring.FlagMode], default="as")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="detection metrics for a score file")
    p.add_argument("scores")
    p.add_argument("--labels", help="labelled dataset CSV")
    p.add_argument("--k", type=int, help="top-k cut-off (default: number of anomalies)")
    p.add_argument("--score", default="AS", help="score column to rank by: AS, RE or E")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="architecture x seed sweep with baseline rows")
    p.add_argument("dataset")
    p.add_argument("--arch", default="AE1,AE2,AE3,AE4,AE5")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--pca-c", default="5,10,20,30")
    p.add_argument("--lof-k", default="10,50")
    p.add_argument("--no-baselines", action="store_true")
    _train_flags(p, 2000)
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except LedgerLensError as exc:
        print(f"ledgerlens {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ledgerlens {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
