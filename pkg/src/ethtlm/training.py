"""Pre-training (masked-token + link-prediction losses) and classification fine-tuning."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, ParameterRegistry, Tensor
from .encoders import (GnnConfig, SeqEncoderConfig, add_linear, add_norm, encode_graph,
                       encode_sequence, init_graph_params, init_sequence_params, linear, norm)
from .errors import ExhaustedCandidates, InvalidConfig, LayoutMismatch, NoMaskedPositions, NonFinite
from .masking import MaskPlan, apply_mask, random_mask
from .synergy import (AlignmentDictionary, fuse_for_pretraining, gather_entity_states,
                      init_linear_fusion_params, init_synergy_params)
from .textualize import PAD_ID, TokenSequence
from .tkg import Tkg, sample_negatives

SCORE_VARIANTS = ("transe", "rotate", "distmult", "complex", "quate")


# ---------------------------------------------------------------- score functions

@dataclass(frozen=True)
class ScoreFunction:
    """Entity vectors are real d; complex variants read them as [re | im],
    QuatE as four d/4 blocks.  RotatE relations are phase angles (d/2)."""
    variant: str
    dim: int

    def __post_init__(self):
        if self.variant not in SCORE_VARIANTS:
            raise InvalidConfig(f"unknown score function {self.variant!r}")
        if self.variant in ("rotate", "complex") and self.dim % 2:
            raise LayoutMismatch(f"{self.variant} needs an even dimension, got {self.dim}")
        if self.variant == "quate" and self.dim % 4:
            raise LayoutMismatch(f"quate needs a dimension divisible by 4, got {self.dim}")

    @property
    def distance_based(self) -> bool:
        return self.variant in ("transe", "rotate")

    def margin(self, gamma: float) -> float:
        """The margin only applies to distance scores.  Bilinear scores are
        unbounded, and a fixed offset lets the loss push every score below
        -gamma together, collapsing the entities onto one direction."""
        return gamma if self.distance_based else 0.0

    @property
    def relation_dim(self) -> int:
        return self.dim // 2 if self.variant == "rotate" else self.dim

    def init_relations(self, reg: ParameterRegistry, name: str, n_rel: int, std: float | None = None):
        if self.variant == "rotate":
            return reg.add(name, (n_rel, self.relation_dim), init="uniform", std=math.pi)
        return reg.add(name, (n_rel, self.relation_dim), std=std)


def _halves(x: Tensor, parts: int) -> list[Tensor]:
    w = x.shape[-1] // parts
    return [ad.getitem(x, (Ellipsis, slice(i * w, (i + 1) * w))) for i in range(parts)]


def score_triple(fn: ScoreFunction, h, r, t) -> Tensor:
    """Plausibility of (h, r, t); higher is more plausible.  Batched over leading axes."""
    h, r, t = ad.as_tensor(h), ad.as_tensor(r), ad.as_tensor(t)
    if h.shape[-1] != fn.dim or t.shape[-1] != fn.dim or r.shape[-1] != fn.relation_dim:
        raise LayoutMismatch(f"{fn.variant}: got h{h.shape} r{r.shape} t{t.shape} for dim {fn.dim}")
    v = fn.variant
    if v == "transe":
        return -ad.l2norm(h + r - t)
    if v == "distmult":
        return ad.tsum(h * r * t, axis=-1)
    if v == "rotate":
        hr, hi = _halves(h, 2)
        tr, ti = _halves(t, 2)
        c, s = ad.cos(r), ad.sin(r)
        re = hr * c - hi * s - tr
        im = hr * s + hi * c - ti
        return -ad.l2norm(ad.concat([re, im], axis=-1))
    if v == "complex":
        hr, hi = _halves(h, 2)
        rr, ri = _halves(r, 2)
        tr, ti = _halves(t, 2)
        return ad.tsum(hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr, axis=-1)
    # quate: rotate h by the unit quaternion r, then dot with t
    a1, b1, c1, d1 = _halves(h, 4)
    a2, b2, c2, d2 = _halves(r, 4)
    den = ad.sqrt(a2 * a2 + b2 * b2 + c2 * c2 + d2 * d2 + 1e-12)
    a2, b2, c2, d2 = a2 / den, b2 / den, c2 / den, d2 / den
    qa = a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2
    qb = a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2
    qc = a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2
    qd = a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2
    ta, tb, tc, td = _halves(t, 4)
    return ad.tsum(qa * ta + qb * tb + qc * tc + qd * td, axis=-1)


# ---------------------------------------------------------------- losses

def bmp_loss(logits, labels) -> Tensor:
    """Mean negative log-likelihood of the original token at each masked position."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise NoMaskedPositions("no masked positions in batch")
    lp = ad.log_softmax(logits, axis=-1)
    picked = ad.getitem(lp, (np.arange(labels.size), labels))
    return -ad.mean(picked)


def tlp_loss(pos_scores, neg_scores, gamma: float = 6.0, form: str = "logsigmoid") -> Tensor:
    """Link-prediction loss, averaged over positives.

    ``pos_scores`` has shape (P,), ``neg_scores`` (P, k).  The default is
    -log s(gamma + d_pos) - mean log s(-gamma - d_neg); ``form="paper"`` gives
    -s(d_pos) + sum s(d_neg).
    """
    pos, neg = ad.as_tensor(pos_scores), ad.as_tensor(neg_scores)
    if neg.ndim == 1:
        neg = ad.reshape(neg, (1, -1)) if pos.size == 1 else ad.reshape(neg, (-1, 1))
    if neg.shape[-1] < 1:
        raise ValueError("need at least one negative")
    if form == "logsigmoid":
        per = -ad.logsigmoid(pos + gamma) - ad.mean(ad.logsigmoid(-neg - gamma), axis=-1)
    elif form == "paper":
        per = -ad.sigmoid(pos) + ad.tsum(ad.sigmoid(neg), axis=-1)
    else:
        raise InvalidConfig(f"unknown loss form {form!r}")
    return ad.mean(per)


# ---------------------------------------------------------------- model

@dataclass
class ModelState:
    registry: ParameterRegistry
    seq: SeqEncoderConfig
    gnn: GnnConfig
    score: ScoreFunction
    n_classes: int = 0

    def state_dict(self) -> dict[str, np.ndarray]:
        return self.registry.state_dict()

    def config_dict(self) -> dict:
        return {"seq": asdict(self.seq), "gnn": asdict(self.gnn), "score": self.score.variant,
                "n_classes": self.n_classes}


def build_model(seq: SeqEncoderConfig, gnn: GnnConfig | None = None, score: str = "rotate",
                seed: int = 0, init_std: float = 0.02) -> ModelState:
    gnn = gnn or GnnConfig(dim=seq.dim)
    if gnn.dim != seq.dim:
        raise InvalidConfig("graph and sequence encoders must share the model dimension")
    reg = ParameterRegistry(seed, init_std)
    d = seq.dim
    init_sequence_params(reg, seq)
    init_graph_params(reg, gnn)
    init_synergy_params(reg, d)
    init_linear_fusion_params(reg, d)
    add_linear(reg, "bmp.t", 2 * d, d)
    add_norm(reg, "bmp.ln", d)
    add_linear(reg, "bmp.out", d, seq.vocab_size)
    fn = ScoreFunction(score, d)
    fn.init_relations(reg, "tlp.rel", gnn.relations)
    return ModelState(reg, seq, gnn, fn)


def add_classifier(model: ModelState, n_classes: int) -> None:
    if "cls.w" in model.registry:
        return
    add_linear(model.registry, "cls", model.seq.dim, n_classes)
    model.n_classes = n_classes


def bmp_logits(model: ModelState, token_states: Tensor, cls_states: Tensor) -> Tensor:
    """Masked-token head over [token state | fused CLS state]."""
    reg = model.registry
    x = ad.gelu(linear(ad.concat([token_states, cls_states], axis=-1), reg, "bmp.t"))
    return linear(norm(x, reg, "bmp.ln"), reg, "bmp.out")


# ---------------------------------------------------------------- batching

@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    tau: float = 0.1
    negatives: int = 4
    score: str = "rotate"
    seed: int = 0
    bmp_weight: float = 1.0
    tlp_weight: float = 1.0
    gamma: float = 6.0
    loss_form: str = "logsigmoid"
    masking: str = "bm25"          # bm25 | random
    mask_rate: float | None = None  # random masking budget; None = plan rate
    use_kg: bool = True
    fusion: str = "mias"           # mias | linear | none
    max_triples: int = 8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.negatives < 1:
            raise InvalidConfig("epochs, batch_size, lr and negatives must be positive")
        if not 0 < self.tau < 1:
            raise InvalidConfig("tau must lie in (0, 1)")
        if self.masking not in ("bm25", "random"):
            raise InvalidConfig(f"unknown masking {self.masking!r}")
        if self.fusion not in ("mias", "linear", "none"):
            raise InvalidConfig(f"unknown fusion {self.fusion!r}")


@dataclass
class PretrainData:
    """Everything the pre-training loop needs, aligned by account index."""
    accounts: list[str]
    seqs: list[TokenSequence]
    plans: list[MaskPlan] | None = None
    kg: Tkg | None = None
    node_features: np.ndarray | None = None     # entities x 26
    dictionary: AlignmentDictionary | None = None
    local_triples: dict[str, list[tuple[int, int, int]]] = field(default_factory=dict)


@dataclass
class Batch:
    ids: np.ndarray            # (B, T)
    pad: np.ndarray            # (B, T) True = real token
    mask_rows: np.ndarray      # flat (b * T + j) indices of masked tokens
    mask_batch: np.ndarray     # b of each masked token
    labels: np.ndarray
    accounts: list[str]
    node_rows: np.ndarray | None = None   # union row -> entity id
    union_triples: list | None = None
    groups: list[np.ndarray] | None = None
    pos: np.ndarray | None = None   # (P, 3) [head slot, rel, tail slot] in padded (B*N) layout
    neg: np.ndarray | None = None   # (P, k, 3)


def _child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 62))


def make_batch(data: PretrainData, idx: Sequence[int], cfg: PretrainConfig, rng: np.random.Generator,
               mask_rate: float) -> Batch:
    seqs = []
    labels_list = []
    for i in idx:
        s = data.seqs[i]
        if cfg.masking == "bm25":
            plan = data.plans[i]
        else:
            plan = random_mask(s, mask_rate, rng, doc_id=i)
        ms, lab = apply_mask(s, plan)
        seqs.append(ms.ids)
        labels_list.append(lab)
    t = max(len(s) for s in seqs)
    b = len(seqs)
    ids = np.full((b, t), PAD_ID, dtype=np.int64)
    pad = np.zeros((b, t), dtype=bool)
    rows, bs, labels = [], [], []
    for k, (s, lab) in enumerate(zip(seqs, labels_list)):
        ids[k, :len(s)] = s
        pad[k, :len(s)] = True
        for p in sorted(lab):
            rows.append(k * t + p)
            bs.append(k)
            labels.append(lab[p])
    accounts = [data.accounts[i] for i in idx]
    batch = Batch(ids, pad, np.asarray(rows, dtype=np.int64), np.asarray(bs, dtype=np.int64),
                  np.asarray(labels, dtype=np.int64), accounts)
    if cfg.use_kg:
        _attach_graph(batch, data, cfg, rng)
    return batch


def _attach_graph(batch: Batch, data: PretrainData, cfg: PretrainConfig, rng) -> None:
    kg, dic = data.kg, data.dictionary
    groups, node_rows, union = [], [], []
    offset = 0
    per_acct = []
    for a in batch.accounts:
        _, nodes = dic.lookup(a)
        groups.append(np.arange(offset, offset + len(nodes)))
        node_rows.append(nodes)
        union.extend((h + offset, r, t + offset) for h, r, t in data.local_triples.get(a, []))
        per_acct.append(nodes)
        offset += len(nodes)
    n_max = max(len(g) for g in groups)
    pos, neg = [], []
    for k, (a, nodes) in enumerate(zip(batch.accounts, per_acct)):
        local = data.local_triples.get(a, [])
        if not local:
            continue
        pick = rng.permutation(len(local))[:cfg.max_triples]
        lut = {int(e): j for j, e in enumerate(nodes)}
        for j in sorted(pick.tolist()):
            h, r, t = local[j]
            g = (int(nodes[h]), r, int(nodes[t]))
            try:
                negs = sample_negatives(kg, g, cfg.negatives, _child_seed(rng), candidates=nodes)
            except ExhaustedCandidates:
                continue
            base = k * n_max
            pos.append((base + h, r, base + t))
            neg.append([(base + lut[x], rr, base + lut[y]) for x, rr, y in negs])
    batch.node_rows = np.concatenate(node_rows)
    batch.union_triples = union
    batch.groups = groups
    batch.pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    batch.neg = np.asarray(neg, dtype=np.int64).reshape(-1, cfg.negatives, 3)


def batch_loss(model: ModelState, batch: Batch, cfg: PretrainConfig,
               node_features: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """(total, bmp, tlp) for one batch."""
    reg = model.registry
    h = encode_sequence(batch.ids, reg, model.seq, batch.pad)
    b, t, d = h.shape
    tlp = ad.Tensor(0.0)
    if cfg.use_kg:
        feats = node_features[batch.node_rows]
        v_all = encode_graph(feats, batch.union_triples, reg, model.gnn)
        v, valid = gather_entity_states(v_all, batch.groups)
        h_hat, v_hat = fuse_for_pretraining(h, v, reg, model.seq.heads, valid, cfg.fusion)
        if len(batch.pos):
            n = v_hat.shape[1]
            flat = ad.reshape(v_hat, (b * n, d))
            rel = reg["tlp.rel"]
            ps = score_triple(model.score, ad.embedding_lookup(flat, batch.pos[:, 0]),
                              ad.embedding_lookup(rel, batch.pos[:, 1]),
                              ad.embedding_lookup(flat, batch.pos[:, 2]))
            ns = score_triple(model.score, ad.embedding_lookup(flat, batch.neg[..., 0]),
                              ad.embedding_lookup(rel, batch.neg[..., 1]),
                              ad.embedding_lookup(flat, batch.neg[..., 2]))
            tlp = tlp_loss(ps, ns, model.score.margin(cfg.gamma), cfg.loss_form)
    else:
        h_hat = h
    flat_h = ad.reshape(h_hat, (b * t, d))
    tok = ad.embedding_lookup(flat_h, batch.mask_rows)
    cls = ad.embedding_lookup(flat_h, batch.mask_batch * t)
    bmp = bmp_loss(bmp_logits(model, tok, cls), batch.labels)
    total = bmp * cfg.bmp_weight + tlp * cfg.tlp_weight
    return total, bmp, tlp


# ---------------------------------------------------------------- pre-training loop

@dataclass
class LossRow:
    epoch: int
    bmp_loss: float
    tlp_loss: float
    total: float
    mask_rate: float


LOSS_COLUMNS = ("epoch", "bmp_loss", "tlp_loss", "total", "mask_rate")


def loss_report_csv(rows: Sequence[LossRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_COLUMNS)
    for r in rows:
        w.writerow([r.epoch, repr(r.bmp_loss), repr(r.tlp_loss), repr(r.total), repr(r.mask_rate)])
    return buf.getvalue()


def plan_mask_rate(data: PretrainData) -> float:
    masked = sum(len(p.masked_positions) for p in data.plans)
    positions = sum(max(len(s) - 1, 0) for s in data.seqs)
    return masked / positions if positions else 0.0


def pretrain(model: ModelState, data: PretrainData, cfg: PretrainConfig, out_dir=None,
             log=None) -> list[LossRow]:
    """Joint pre-training; one checkpoint per epoch under ``out_dir`` when given."""
    if cfg.masking == "bm25" and data.plans is None:
        raise InvalidConfig("bm25 masking needs mask plans")
    if cfg.use_kg and (data.kg is None or data.dictionary is None or data.node_features is None):
        raise InvalidConfig("knowledge-graph training needs kg, dictionary and node features")
    rate = cfg.mask_rate
    if rate is None:
        rate = plan_mask_rate(data) if data.plans is not None else 0.15
    opt = Adam(model.registry, lr=cfg.lr, names=_pretrain_names(model, cfg))
    rows = []
    step = 0
    n = len(data.seqs)
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        sums = np.zeros(3)
        masked = positions = 0
        count = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size].tolist()
            batch = make_batch(data, idx, cfg, rng, rate)
            model.registry.zero_grad()
            total, bmp, tlp = batch_loss(model, batch, cfg, data.node_features)
            step += 1
            if not np.isfinite(total.item()):
                raise NonFinite(step, f"loss={total.item()!r} bmp={bmp.item()!r} tlp={tlp.item()!r}")
            ad.backward(total)
            opt.step()
            w = len(idx)
            sums += w * np.array([bmp.item(), tlp.item(), total.item()])
            count += w
            masked += len(batch.labels)
            positions += int(batch.pad.sum()) - len(idx)
        row = LossRow(epoch, *(sums / count).tolist(), masked / max(positions, 1))
        rows.append(row)
        if log:
            log(f"epoch {epoch}: bmp={row.bmp_loss:.4f} tlp={row.tlp_loss:.4f} total={row.total:.4f}")
        if out_dir is not None:
            d = Path(out_dir)
            d.mkdir(parents=True, exist_ok=True)
            ad.save_checkpoint(d / f"pretrain_epoch{epoch:03d}.ckpt", model.state_dict(),
                               {"epoch": epoch, "model": model.config_dict()})
            (d / "loss_report.csv").write_text(loss_report_csv(rows))
    return rows


def _pretrain_names(model: ModelState, cfg: PretrainConfig) -> list[str]:
    skip = ("cls.",)
    if not cfg.use_kg:
        skip += ("gnn.", "mias.", "fuse.", "tlp.")
    elif cfg.fusion != "mias":
        skip += ("mias.",)
    if cfg.fusion != "linear":
        skip += ("fuse.",)
    return [n for n in model.registry.names() if not n.startswith(skip)]


# ---------------------------------------------------------------- fine-tuning

@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 15
    batch_size: int = 16
    lr: float = 3e-4
    seed: int = 0
    freeze_encoder: bool = False
    balanced: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise InvalidConfig("epochs, batch_size and lr must be positive")


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    t = max(len(s) for s in seqs)
    ids = np.full((len(seqs), t), PAD_ID, dtype=np.int64)
    pad = np.zeros((len(seqs), t), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        pad[i, :len(s)] = True
    return ids, pad


def class_logits(model: ModelState, seqs: Sequence[Sequence[int]]) -> Tensor:
    ids, pad = _pad(seqs)
    h = encode_sequence(ids, model.registry, model.seq, pad)
    cls = ad.getitem(h, (slice(None), 0))
    return linear(cls, model.registry, "cls")


def predict_proba(model: ModelState, seqs: Sequence[TokenSequence], batch_size: int = 32) -> np.ndarray:
    out = []
    with ad.no_grad():
        for s in range(0, len(seqs), batch_size):
            chunk = [q.ids for q in seqs[s:s + batch_size]]
            out.append(ad.softmax(class_logits(model, chunk), axis=-1).data)
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def weighted_cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    lp = ad.log_softmax(logits, axis=-1)
    picked = ad.getitem(lp, (np.arange(len(labels)), labels))
    w = weights[labels]
    return -ad.tsum(picked * w) * (1.0 / float(w.sum()))


@dataclass
class FinetuneResult:
    best_epoch: int
    best_val_f1: float
    history: list[dict]


def finetune(model: ModelState, train: Sequence[TokenSequence], train_labels: Sequence[int],
             val: Sequence[TokenSequence], val_labels: Sequence[int], cfg: FinetuneConfig,
             n_classes: int = 2, positive: int = 1, log=None, on_epoch=None) -> FinetuneResult:
    """Cross-entropy on the [CLS] state; keeps the parameters of the best validation-F1 epoch.

    ``on_epoch(epoch, model)`` is called after each epoch, before selection.
    """
    from .evaluate import f1_from_predictions

    add_classifier(model, n_classes)
    reg = model.registry
    y = np.asarray(train_labels, dtype=np.int64)
    yv = np.asarray(val_labels, dtype=np.int64)
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    if cfg.balanced:
        weights = np.where(counts > 0, len(y) / (n_classes * np.maximum(counts, 1)), 0.0)
    else:
        weights = np.ones(n_classes)
    names = [n for n in reg.names() if n.startswith("cls.")] if cfg.freeze_encoder else \
        [n for n in reg.names() if n.startswith(("seq.", "cls."))]
    opt = Adam(reg, lr=cfg.lr, names=names)
    best = (-1.0, 0)
    best_state = reg.state_dict()
    history = []
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, 7919, epoch])
        order = rng.permutation(len(train))
        tot = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            reg.zero_grad()
            loss = weighted_cross_entropy(class_logits(model, [train[i].ids for i in idx]), y[idx], weights)
            if not np.isfinite(loss.item()):
                raise NonFinite(epoch, f"finetune loss {loss.item()!r}")
            ad.backward(loss)
            opt.step()
            tot += loss.item() * len(idx)
        pred = predict_proba(model, val).argmax(axis=1)
        f1 = f1_from_predictions(yv, pred, n_classes, positive)
        history.append({"epoch": epoch, "train_loss": tot / len(order), "val_f1": f1})
        if log:
            log(f"finetune epoch {epoch}: loss={tot / len(order):.4f} val_f1={f1:.2f}")
        if on_epoch:
            on_epoch(epoch, model)
        # ties go to the later epoch: the validation split is small and F1 plateaus
        if f1 >= best[0]:
            best = (f1, epoch)
            best_state = reg.state_dict()
    reg.load_state_dict(best_state)
    return FinetuneResult(best[1], best[0], history)


# ---------------------------------------------------------------- stand-alone KG embedding

@dataclass
class KgeResult:
    entities: np.ndarray
    relations: np.ndarray
    max_modulus_error: float


def train_kge(triples: Sequence[tuple[int, int, int]], n_entities: int, n_relations: int,
              variant: str, dim: int = 16, epochs: int = 200, lr: float = 0.05,
              negatives: int = 4, gamma: float = 6.0, seed: int = 0,
              known: set | None = None, init: tuple[np.ndarray, np.ndarray] | None = None,
              on_epoch=None, entity_scale: float = 0.1) -> KgeResult:
    """Free-embedding link prediction on a fixed triple list (full batch per epoch).

    Entities start uniform in +-entity_scale; relations use the score's own init.
    """
    fn = ScoreFunction(variant, dim)
    reg = ParameterRegistry(seed)
    if init is None:
        ent = reg.add("ent", (n_entities, dim), init="uniform", std=entity_scale)
        rel = fn.init_relations(reg, "rel", n_relations, std=0.5)
    else:
        ent = reg.add("ent", (n_entities, dim), value=init[0])
        rel = reg.add("rel", (n_relations, fn.relation_dim), value=init[1])
    opt = Adam(reg, lr=lr)
    arr = np.asarray(list(triples), dtype=np.int64)
    known = known if known is not None else set(map(tuple, arr.tolist()))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for epoch in range(epochs):
        neg = np.repeat(arr[:, None, :], negatives, axis=1).copy()
        for i in range(len(arr)):
            for j in range(negatives):
                for _ in range(100):
                    e = int(rng.integers(n_entities))
                    cand = neg[i, j].copy()
                    cand[0 if rng.random() < 0.5 else 2] = e
                    if tuple(cand.tolist()) not in known:
                        neg[i, j] = cand
                        break
        reg.zero_grad()
        ps = score_triple(fn, ad.embedding_lookup(ent, arr[:, 0]), ad.embedding_lookup(rel, arr[:, 1]),
                          ad.embedding_lookup(ent, arr[:, 2]))
        ns = score_triple(fn, ad.embedding_lookup(ent, neg[..., 0]), ad.embedding_lookup(rel, neg[..., 1]),
                          ad.embedding_lookup(ent, neg[..., 2]))
        ad.backward(tlp_loss(ps, ns, fn.margin(gamma)))
        opt.step()
        if variant == "rotate":
            worst = max(worst, rotate_modulus_error(rel.data))
        if on_epoch:
            on_epoch(epoch, ent.data, rel.data)
    return KgeResult(ent.data.copy(), rel.data.copy(), worst)


def rotate_modulus_error(angles: np.ndarray) -> float:
    """Max deviation of |exp(i theta)| from 1 for stored phase angles."""
    z = np.cos(angles) + 1j * np.sin(angles)
    return float(np.max(np.abs(np.abs(z) - 1.0), initial=0.0))


def tail_ranks(variant: str, ent: np.ndarray, rel: np.ndarray, test: Sequence[tuple[int, int, int]],
               known: set | None = None) -> np.ndarray:
    """Rank of each true tail among all entities (filtered of other known positives)."""
    fn = ScoreFunction(variant, ent.shape[1])
    ranks = []
    with ad.no_grad():
        for h, r, t in test:
            n = ent.shape[0]
            s = score_triple(fn, np.repeat(ent[h][None], n, 0), np.repeat(rel[r][None], n, 0), ent).data
            better = s > s[t]
            if known:
                for e in range(n):
                    if e != t and (h, r, e) in known:
                        better[e] = False
            ranks.append(1 + int(better.sum()))
    return np.asarray(ranks)


def write_manifest(path, config: dict, seed: int, metrics: dict | None = None) -> dict:
    """JSON run manifest with a stable config hash."""
    import hashlib
    import subprocess

    blob = json.dumps(config, sort_keys=True, default=str).encode()
    try:
        describe = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                                  text=True, timeout=5).stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        describe = "unknown"
    man = {"config_hash": hashlib.sha256(blob).hexdigest(), "seed": seed, "git_describe": describe,
           "config": config, "metrics": metrics or {}}
    Path(path).write_text(json.dumps(man, sort_keys=True, indent=2, default=str) + "\n")
    return man

