"""End-to-end run: dataset -> corpus/vocab/masks -> features/KG -> pretrain -> finetune -> metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoders import GnnConfig, SeqEncoderConfig
from .evaluate import compute_metrics
from .features import build_transaction_graph, expert_feature_matrix, normalize_features
from .ingest import LabeledDataset
from .masking import bm25_plans, fit_bm25
from .synergy import AlignmentDictionary
from .textualize import Vocabulary, account_text, tokenize, train_vocab
from .tkg import Tkg, build_tkg, retrieve_subgraph
from .training import (FinetuneConfig, ModelState, PretrainConfig, PretrainData, build_model, finetune,
                       loss_report_csv, predict_proba, pretrain, write_manifest)


@dataclass(frozen=True)
class PipelineConfig:
    max_len: int = 512
    vocab_size: int = 1000
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ff_dim: int = 256
    gnn_layers: int = 2
    rel_dim: int = 16
    max_nodes: int = 100
    bm25_variant: str = "bm25l"
    z1: float = 1.2
    b: float = 0.75
    delta: float = 0.5
    plain_mask_rate: float = 0.15
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def variant_overrides(variant: str) -> dict:
    """Pre-training switches for each ablation variant."""
    table = {
        "full": {},
        "w/o-BMP": {"masking": "random"},
        "w/o-TKG": {"use_kg": False},
        "w/o-Expert": {},
        "w/o-MiAS": {"fusion": "linear"},
        "plain-LM": {"masking": "random", "use_kg": False},
    }
    if variant not in table:
        raise ValueError(f"unknown variant {variant!r}")
    return table[variant]


@dataclass
class Prepared:
    vocab: Vocabulary
    seqs: dict[str, object]
    plans: dict[str, object]
    kg: Tkg
    features: np.ndarray          # normalised, entities x 26
    dictionary: AlignmentDictionary
    local_triples: dict[str, list]
    pretrain_accounts: list[str]
    plan_rate: float


def prepare(ds: LabeledDataset, cfg: PipelineConfig) -> Prepared:
    """Seed-independent preprocessing shared by every run on ``ds``."""
    pre_accounts = ds.addresses("train") + ds.addresses("val")
    ledgers = {led.address: led for led in ds.accounts}
    texts = {a: account_text(ledgers[a]) for a in ledgers}
    vocab = train_vocab([texts[a] for a in pre_accounts], cfg.vocab_size)
    seqs = {a: tokenize(texts[a], vocab, cfg.max_len) for a in ledgers}
    pre_seqs = [seqs[a] for a in pre_accounts]
    bm = fit_bm25(pre_seqs, cfg.z1, cfg.b, cfg.delta, cfg.bm25_variant)
    plan_list = bm25_plans(pre_seqs, bm, cfg.pretrain.tau)
    plans = dict(zip(pre_accounts, plan_list))
    masked = sum(len(p.masked_positions) for p in plan_list)
    rate = masked / max(1, sum(len(s) - 1 for s in pre_seqs))

    txs = ds.transactions()
    g = build_transaction_graph(txs, ledgers)
    addrs, raw = expert_feature_matrix(ledgers, g)
    index = {a: i for i, a in enumerate(addrs)}
    train_rows = [index[a] for a in ds.addresses("train") if a in index]
    norm, _, _ = normalize_features(raw, train_rows)
    kg = build_tkg(txs, dict(zip(addrs, norm)))
    feats = kg.node_features

    dic = AlignmentDictionary()
    local = {}
    for a in pre_accounts:
        sub = retrieve_subgraph(kg, a, cfg.max_nodes)
        dic.add(a, sub.anchor, sub.nodes)
        li = sub.local_index()
        local[a] = [(li[h], r, li[t]) for h, r, t in sub.triples]
    return Prepared(vocab, seqs, plans, kg, feats, dic, local, pre_accounts, rate)


def run_variant(ds: LabeledDataset, prep: Prepared, cfg: PipelineConfig, variant: str, seed: int,
                out_dir=None, log=None) -> dict:
    """Train one (variant, seed) from scratch and return test metrics plus loss curve."""
    over = variant_overrides(variant)
    pcfg = replace(cfg.pretrain, seed=seed, **over)
    if pcfg.masking == "random":
        rate = prep.plan_rate if variant != "plain-LM" else cfg.plain_mask_rate
        pcfg = replace(pcfg, mask_rate=rate)
    feats = prep.features
    if variant == "w/o-Expert":
        feats = np.random.default_rng([seed, 4099]).standard_normal(feats.shape)

    seq_cfg = SeqEncoderConfig(len(prep.vocab), cfg.layers, cfg.heads, cfg.dim, cfg.ff_dim, cfg.max_len)
    gnn_cfg = GnnConfig(cfg.dim, cfg.gnn_layers, feats.shape[1], 2, cfg.rel_dim)
    model = build_model(seq_cfg, gnn_cfg, pcfg.score, seed)
    accts = prep.pretrain_accounts
    data = PretrainData(accts, [prep.seqs[a] for a in accts], [prep.plans[a] for a in accts],
                        prep.kg, feats, prep.dictionary, prep.local_triples)
    ck_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    rows = pretrain(model, data, pcfg, ck_dir, log)

    fcfg = replace(cfg.finetune, seed=seed)
    tr, va, te = (ds.addresses(p) for p in ("train", "val", "test"))
    n_classes = max(ds.labels.values()) + 1
    ft = finetune(model, [prep.seqs[a] for a in tr], [ds.labels[a] for a in tr],
                  [prep.seqs[a] for a in va], [ds.labels[a] for a in va], fcfg, n_classes, log=log)
    probs = predict_proba(model, [prep.seqs[a] for a in te])
    report = compute_metrics(probs, [ds.labels[a] for a in te])
    result = {"variant": variant, "seed": seed, **report.to_dict(),
              "best_epoch": ft.best_epoch, "val_f1": ft.best_val_f1,
              "loss": [asdict(r) for r in rows]}
    if out_dir is not None:
        write_run_outputs(Path(out_dir), model, prep.vocab, cfg, variant, seed, result, rows)
    return result


def write_run_outputs(d: Path, model: ModelState, vocab: Vocabulary, cfg: PipelineConfig, variant: str,
                      seed: int, result: dict, rows) -> None:
    d.mkdir(parents=True, exist_ok=True)
    save_model(d / "model.ckpt", model, vocab, {"variant": variant, "seed": seed})
    (d / "loss_report.csv").write_text(loss_report_csv(rows))
    metrics = {k: v for k, v in result.items() if k != "loss"}
    (d / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    conf = cfg.to_dict()
    conf["variant"] = variant
    (d / "resolved_config.json").write_text(json.dumps(conf, sort_keys=True, indent=2) + "\n")
    write_manifest(d / "manifest.json", conf, seed, metrics)


# ---------------------------------------------------------------- model files

def save_model(path, model: ModelState, vocab: Vocabulary, extra: dict | None = None) -> None:
    meta = {"model": model.config_dict(), "vocab": list(vocab.tokens), **(extra or {})}
    ad.save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> tuple[ModelState, Vocabulary, dict]:
    tensors, meta = ad.load_checkpoint(path)
    mc = meta["model"]
    seq = SeqEncoderConfig(**mc["seq"])
    gnn = GnnConfig(**mc["gnn"])
    model = build_model(seq, gnn, mc["score"])
    if mc.get("n_classes"):
        from .training import add_classifier
        add_classifier(model, mc["n_classes"])
    model.registry.load_state_dict(tensors)
    return model, Vocabulary(meta["vocab"]), meta
