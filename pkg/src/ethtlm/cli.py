"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidConfig, NumericError, PipelineError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train.epochs=3")
    common.add_argument("--json", action="store_true", help="machine-readable output and errors")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS threads (default: all cores; 1 forces determinism)")

    p = _Parser(prog="ethtlm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic dataset")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--rate", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse an Etherscan export into a dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    s.add_argument("--labels", help="CSV with columns address,label")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("features", parents=[common], help="compute the 26 expert features")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("build-kg", parents=[common], help="build the transaction knowledge graph")
    s.add_argument("--dataset", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("pretrain", parents=[common], help="joint masked-token / link-prediction pre-training")
    s.add_argument("--dataset")
    s.add_argument("--out")

    s = sub.add_parser("finetune", parents=[common], help="fine-tune a classifier on a pre-trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset")
    s.add_argument("--out")

    s = sub.add_parser("eval", parents=[common], help="evaluate a fine-tuned model on the test split")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset")
    s.add_argument("--out", required=True)

    s = sub.add_parser("ablate", parents=[common], help="run ablation variants over several seeds")
    s.add_argument("--suite")
    s.add_argument("--runs", type=int)
    s.add_argument("--dataset")
    s.add_argument("--out", required=True)

    s = sub.add_parser("bm25-hist", parents=[common], help="normalised BM25 score distribution")
    s.add_argument("--corpus", required=True)
    s.add_argument("--variant", choices=("bm25", "bm25l"), default="bm25l")
    s.add_argument("--bins", type=int, default=50)
    s.add_argument("--out", required=True)

    s = sub.add_parser("len-hist", parents=[common], help="transaction-count and lifespan histograms")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)

    for name, help_ in (("sweep-tau", "metrics for several mask thresholds"),
                        ("sweep-lmax", "metrics for several maximum sequence lengths")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--values", type=_floats, required=True)
        s.add_argument("--runs", type=int, default=1)
        s.add_argument("--dataset")
        s.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------- helpers

def _resolve(args):
    from .config import load_config

    cfg = load_config(args.config, overrides=args.set)
    return cfg


def _dataset(args, cfg):
    from .ingest import load_dataset

    path = getattr(args, "dataset", None) or cfg["ingest.dataset"]
    if not path:
        raise DataError("no dataset given (use --dataset or ingest.dataset)")
    p = Path(path)
    if p.is_dir():
        p = p / "dataset.json"
    if not p.exists():
        raise DataError(f"dataset file {str(p)!r} not found")
    return load_dataset(p)


def _out_dir(args, cfg) -> Path:
    d = Path(getattr(args, "out", None) or cfg["run.out_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _finish(out: Path, cfg, seed: int, metrics: dict | None = None) -> None:
    from .training import write_manifest

    (out / "resolved_config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    write_manifest(out / "manifest.json", cfg.to_dict(), seed, metrics)


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True, default=str))
    else:
        print(text)


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    from .ingest import SynthConfig, generate_synthetic_dataset, save_dataset

    cfg.set("ingest.n_accounts", args.n)
    cfg.set("ingest.anomaly_rate", args.rate)
    cfg.set("run.seed", args.seed)
    ds = generate_synthetic_dataset(SynthConfig(n_accounts=args.n, anomaly_rate=args.rate, seed=args.seed,
                                                split_ratios=tuple(cfg["ingest.split"])))
    out = _out_dir(args, cfg)
    save_dataset(ds, out / "dataset.json")
    _finish(out, cfg, args.seed)
    n_pos = sum(ds.labels.values())
    _emit(args, {"accounts": len(ds.accounts), "anomalous": n_pos, "out": str(out)},
          f"wrote {len(ds.accounts)} accounts ({n_pos} anomalous) to {out / 'dataset.json'}")


def cmd_ingest(args, cfg):
    from .ingest import LabeledDataset, build_account_ledgers, parse_transactions, save_dataset, split_dataset

    try:
        raw = Path(args.input).read_bytes()
    except OSError as e:
        raise DataError(str(e)) from None
    txs = parse_transactions(raw, args.format)
    ledgers = build_account_ledgers(txs, drop_failed=cfg["ingest.drop_failed"])
    labels = {}
    if args.labels:
        for row in csv.DictReader(io.StringIO(Path(args.labels).read_text())):
            labels[row["address"].lower().removeprefix("0x")] = int(row["label"])
        accounts = [ledgers[a] for a in sorted(labels) if a in ledgers]
    else:
        accounts = [ledgers[a] for a in sorted(ledgers)]
        labels = {led.address: 0 for led in accounts}
    ds = LabeledDataset(accounts, {led.address: labels[led.address] for led in accounts}, {})
    if args.labels:
        ds = split_dataset(ds, tuple(cfg["ingest.split"]), args.seed)
    out = _out_dir(args, cfg)
    save_dataset(ds, out / "dataset.json")
    _finish(out, cfg, args.seed)
    _emit(args, {"transactions": len(txs), "accounts": len(accounts)},
          f"parsed {len(txs)} transactions into {len(accounts)} account ledgers")


def cmd_features(args, cfg):
    from .features import build_transaction_graph, expert_feature_matrix, features_to_csv

    ds = _dataset(args, cfg)
    ledgers = {led.address: led for led in ds.accounts}
    g = build_transaction_graph(ds.transactions(), ledgers)
    addrs, m = expert_feature_matrix(ledgers, g)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(features_to_csv(addrs, m))
    _finish(out.parent, cfg, cfg["run.seed"])
    _emit(args, {"rows": len(addrs)}, f"wrote features for {len(addrs)} addresses to {out}")


def cmd_build_kg(args, cfg):
    from .features import features_from_csv, normalize_features
    from .tkg import build_tkg, write_tkg

    ds = _dataset(args, cfg)
    addrs, raw = features_from_csv(Path(args.features).read_text())
    index = {a: i for i, a in enumerate(addrs)}
    train = [index[a] for a in ds.addresses("train") if a in index] or None
    norm, _, _ = normalize_features(raw, train)
    kg = build_tkg(ds.transactions(), dict(zip(addrs, norm)))
    out = _out_dir(args, cfg)
    write_tkg(kg, out)
    _finish(out, cfg, cfg["run.seed"])
    _emit(args, {"entities": kg.n_entities, "triples": len(kg.triples)},
          f"knowledge graph: {kg.n_entities} entities, {len(kg.triples)} triples -> {out}")


def _pretrained(args, cfg, ds):
    from .pipeline import prepare

    pc = _pipeline(cfg)
    return pc, prepare(ds, pc)


def _pipeline(cfg):
    from .config import pipeline_config

    return pipeline_config(cfg)


def cmd_pretrain(args, cfg):
    from .encoders import GnnConfig, SeqEncoderConfig
    from .pipeline import save_model, variant_overrides
    from .training import PretrainData, build_model, pretrain

    ds = _dataset(args, cfg)
    pc, prep = _pretrained(args, cfg, ds)
    seed = cfg["run.seed"]
    variant = cfg["train.variant"]
    pcfg = replace(pc.pretrain, **variant_overrides(variant))
    if pcfg.masking == "random":
        pcfg = replace(pcfg, mask_rate=prep.plan_rate if variant != "plain-LM" else pc.plain_mask_rate)
    feats = prep.features
    if variant == "w/o-Expert":
        feats = np.random.default_rng([seed, 4099]).standard_normal(feats.shape)
    model = build_model(SeqEncoderConfig(len(prep.vocab), pc.layers, pc.heads, pc.dim, pc.ff_dim, pc.max_len),
                        GnnConfig(pc.dim, pc.gnn_layers, feats.shape[1], 2, pc.rel_dim), pcfg.score, seed)
    accts = prep.pretrain_accounts
    data = PretrainData(accts, [prep.seqs[a] for a in accts], [prep.plans[a] for a in accts],
                        prep.kg, feats, prep.dictionary, prep.local_triples)
    out = _out_dir(args, cfg)
    log = None if args.json else (lambda s: print(s, file=sys.stderr))
    rows = pretrain(model, data, pcfg, out / "checkpoints", log)
    save_model(out / "model.ckpt", model, prep.vocab, {"stage": "pretrain", "variant": variant})
    (out / "loss_report.csv").write_text((out / "checkpoints" / "loss_report.csv").read_text())
    final = {"bmp_loss": rows[-1].bmp_loss, "tlp_loss": rows[-1].tlp_loss, "total": rows[-1].total,
             "mask_rate": rows[-1].mask_rate}
    _finish(out, cfg, seed, final)
    _emit(args, {"out": str(out), **final}, f"pre-trained {pcfg.epochs} epochs; final loss {rows[-1].total:.4f}")


def _seqs(ds, vocab, max_len):
    from .textualize import account_text, tokenize

    return {led.address: tokenize(account_text(led), vocab, max_len) for led in ds.accounts}


def cmd_finetune(args, cfg):
    from .pipeline import load_model, save_model
    from .training import finetune

    ds = _dataset(args, cfg)
    model, vocab, _ = load_model(args.model)
    seqs = _seqs(ds, vocab, model.seq.max_len)
    pc = _pipeline(cfg)
    tr, va = ds.addresses("train"), ds.addresses("val")
    if not tr or not va:
        raise DataError("dataset has no train/val split")
    n_classes = max(ds.labels.values()) + 1
    log = None if args.json else (lambda s: print(s, file=sys.stderr))
    res = finetune(model, [seqs[a] for a in tr], [ds.labels[a] for a in tr], [seqs[a] for a in va],
                   [ds.labels[a] for a in va], pc.finetune, n_classes, log=log)
    out = _out_dir(args, cfg)
    save_model(out / "finetuned.ckpt", model, vocab, {"stage": "finetune"})
    metrics = {"best_epoch": res.best_epoch, "val_f1": res.best_val_f1}
    (out / "finetune_history.json").write_text(json.dumps(res.history, indent=2) + "\n")
    _finish(out, cfg, cfg["run.seed"], metrics)
    _emit(args, metrics, f"best validation F1 {res.best_val_f1:.2f} at epoch {res.best_epoch}")


def cmd_eval(args, cfg):
    from .evaluate import compute_metrics
    from .pipeline import load_model
    from .training import predict_proba

    ds = _dataset(args, cfg)
    model, vocab, _ = load_model(args.model)
    if not model.n_classes:
        raise DataError("model has no classifier head; run finetune first")
    seqs = _seqs(ds, vocab, model.seq.max_len)
    te = ds.addresses("test") or ds.addresses()
    probs = predict_proba(model, [seqs[a] for a in te])
    report = compute_metrics(probs, [ds.labels[a] for a in te]).to_dict()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    _finish(out.parent, cfg, cfg["run.seed"], report)
    _emit(args, report, f"F1 {report['f1']:.2f}  AUC {report['auc']:.2f}  FNR {report['fnr']:.2f}")


def cmd_ablate(args, cfg):
    from .evaluate import ablation_table, paired_comparison, run_ablation
    from .ingest import SynthConfig, generate_synthetic_dataset
    from .pipeline import prepare, run_variant

    suite = [s.strip() for s in (args.suite or cfg["eval.suite"]).split(",") if s.strip()]
    runs = args.runs or cfg["eval.runs"]
    pc = _pipeline(cfg)
    fixed = None
    if args.dataset or cfg["ingest.dataset"]:
        ds = _dataset(args, cfg)
        fixed = (ds, prepare(ds, pc))
    cache = {}

    def run_one(variant, seed):
        if fixed is not None:
            ds, prep = fixed
        else:
            if seed not in cache:
                ds = generate_synthetic_dataset(SynthConfig(n_accounts=cfg["ingest.n_accounts"],
                                                            anomaly_rate=cfg["ingest.anomaly_rate"], seed=seed))
                cache[seed] = (ds, prepare(ds, pc))
            ds, prep = cache[seed]
        return run_variant(ds, prep, pc, variant, seed)

    log = None if args.json else (lambda s: print(s, file=sys.stderr))
    summaries = run_ablation(suite, run_one, runs, log)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(ablation_table(summaries))
    comparisons = {}
    full = next((s for s in summaries if s.variant == "full"), None)
    for s in summaries:
        if full is not None and s is not full:
            comparisons[f"full vs {s.variant}"] = paired_comparison(full, s)
    result = {"table": str(out), "comparisons": comparisons,
              "errors": {s.variant: s.errors for s in summaries if s.errors}}
    (out.parent / (out.stem + "_comparisons.json")).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    _finish(out.parent, cfg, cfg["run.seed"], result)
    _emit(args, result, ablation_table(summaries).rstrip())


def cmd_bm25_hist(args, cfg):
    from .masking import fit_bm25, score_tokens
    from .textualize import read_corpus, tokenize, train_vocab

    corpus = read_corpus(args.corpus)
    texts = [t for _, t in corpus]
    vocab = train_vocab(texts, cfg["model.vocab_size"])
    seqs = [tokenize(t, vocab, cfg["model.max_len"]) for t in texts]
    m = fit_bm25(seqs, cfg["mask.z1"], cfg["mask.b"], cfg["mask.delta"], args.variant)
    normed = []
    masked = 0
    tau = cfg["mask.tau"]
    for s in seqs:
        sc = np.asarray(score_tokens(m, s)[1:])
        tot = sc.sum()
        if tot > 0:
            normed.extend((sc / tot).tolist())
            masked += int((sc / tot > tau).sum())
    counts, edges = np.histogram(normed, bins=args.bins, range=(0.0, max(normed, default=1.0) or 1.0))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("bin_lo", "bin_hi", "count"))
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        w.writerow((f"{lo:.6g}", f"{hi:.6g}", int(c)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    stats = {"tokens": len(normed), "above_tau": masked, "tau": tau,
             "rate_above_tau": masked / max(1, len(normed))}
    _finish(out.parent, cfg, cfg["run.seed"], stats)
    _emit(args, stats, f"{len(normed)} token scores, {masked} above tau={tau}")


def cmd_len_hist(args, cfg):
    ds = _dataset(args, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("quantity", "value", "count"))
    counts = np.array([len(led) for led in ds.accounts])
    spans = np.array([(led.transactions[-1][0].timeStamp - led.transactions[0][0].timeStamp) // 86400
                      if led.transactions else 0 for led in ds.accounts])
    for name, arr in (("tx_count", counts), ("lifespan_days", spans)):
        vals, cnt = np.unique(arr, return_counts=True)
        for v, c in zip(vals, cnt):
            w.writerow((name, int(v), int(c)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    _finish(out.parent, cfg, cfg["run.seed"])
    _emit(args, {"accounts": len(ds.accounts)}, f"wrote histograms for {len(ds.accounts)} accounts to {out}")


def _sweep(args, cfg, key: str):
    from .ingest import SynthConfig, generate_synthetic_dataset
    from .pipeline import prepare, run_variant

    rows = []
    for val in args.values:
        cfg.set(key, int(val) if key == "model.max_len" else val)
        pc = _pipeline(cfg)
        for seed in range(args.runs):
            if args.dataset or cfg["ingest.dataset"]:
                ds = _dataset(args, cfg)
            else:
                ds = generate_synthetic_dataset(SynthConfig(n_accounts=cfg["ingest.n_accounts"],
                                                            anomaly_rate=cfg["ingest.anomaly_rate"], seed=seed))
            r = run_variant(ds, prepare(ds, pc), pc, "full", seed)
            rows.append({key: val, "seed": seed, "f1": r["f1"], "auc": r["auc"], "fnr": r["fnr"]})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=[key, "seed", "f1", "auc", "fnr"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    _finish(out.parent, cfg, cfg["run.seed"], {"rows": len(rows)})
    _emit(args, {"rows": rows}, buf.getvalue().rstrip())


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "features": cmd_features, "build-kg": cmd_build_kg,
    "pretrain": cmd_pretrain, "finetune": cmd_finetune, "eval": cmd_eval, "ablate": cmd_ablate,
    "bm25-hist": cmd_bm25_hist, "len-hist": cmd_len_hist,
    "sweep-tau": lambda a, c: _sweep(a, c, "mask.tau"),
    "sweep-lmax": lambda a, c: _sweep(a, c, "model.max_len"),
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    want_json = "--json" in argv
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        _report(want_json, "UsageError", str(e))
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    try:
        cfg = _resolve(args)
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            threadpool_limits(max(1, args.threads))
            os.environ["OMP_NUM_THREADS"] = str(max(1, args.threads))
        COMMANDS[args.command](args, cfg)
    except InvalidConfig as e:
        _report(args.json, type(e).__name__, str(e), e.to_dict())
        return EXIT_USAGE
    except NumericError as e:
        _report(args.json, type(e).__name__, str(e), e.to_dict())
        return EXIT_NUMERIC
    except (DataError, PipelineError) as e:
        _report(args.json, type(e).__name__, str(e), e.to_dict())
        return EXIT_DATA
    except (OSError, ValueError, KeyError) as e:
        _report(args.json, type(e).__name__, str(e))
        return EXIT_DATA
    return EXIT_OK


def _report(as_json: bool, kind: str, message: str, detail: dict | None = None) -> None:
    if as_json:
        print(json.dumps(detail or {"error": kind, "message": message}, default=str), file=sys.stderr)
    else:
        print(f"error: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
