"""BM25-salience masking of tokenized account texts."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyCorpus
from .textualize import CLS_ID, MASK_ID, TokenSequence

DEFAULT_TAU = 0.1


@dataclass
class Bm25Model:
    idf: dict[int, float]
    avgdl: float
    n_docs: int
    z1: float = 1.2
    b: float = 0.75
    delta: float = 0.5
    variant: str = "bm25l"

    def idf_of(self, tok: int) -> float:
        # unseen token: df = 0
        return self.idf.get(tok, math.log(self.n_docs))


@dataclass
class MaskPlan:
    doc_id: int
    masked_positions: frozenset[int]
    tau: float
    scores: list[float]


def _body(seq: TokenSequence | Sequence[int]) -> list[int]:
    ids = list(seq.ids if isinstance(seq, TokenSequence) else seq)
    return ids[1:] if ids and ids[0] == CLS_ID else ids


def fit_bm25(corpus: Sequence[TokenSequence], z1: float = 1.2, b: float = 0.75,
             delta: float = 0.5, variant: str = "bm25l") -> Bm25Model:
    """Corpus statistics: idf = ln(|C| / (df + 1)) and mean length without [CLS]."""
    if not corpus:
        raise EmptyCorpus("cannot fit BM25 on an empty corpus")
    if variant not in ("bm25", "bm25l"):
        raise ValueError(f"unknown BM25 variant {variant!r}")
    df: Counter[int] = Counter()
    total = 0
    for seq in corpus:
        body = _body(seq)
        total += len(body)
        df.update(set(body))
    n = len(corpus)
    idf = {tok: math.log(n / (c + 1)) for tok, c in df.items()}
    avgdl = total / n
    if avgdl <= 0:
        avgdl = 1.0
    return Bm25Model(idf, avgdl, n, z1, b, delta, variant)


def score_tokens(m: Bm25Model, doc: TokenSequence | Sequence[int]) -> list[float]:
    """Per-position scores aligned with ``doc.ids``; [CLS] scores 0, negatives clamp to 0."""
    ids = list(doc.ids if isinstance(doc, TokenSequence) else doc)
    has_cls = bool(ids) and ids[0] == CLS_ID
    body = ids[1:] if has_cls else ids
    tf = Counter(body)
    norm = 1.0 - m.b + m.b * len(body) / m.avgdl
    per_tok: dict[int, float] = {}
    for tok, f in tf.items():
        idf = m.idf_of(tok)
        if m.variant == "bm25":
            s = f * (idf * (m.z1 + 1)) / (f + m.z1 * norm)
        else:
            c = f / norm + m.delta
            s = idf * (m.z1 + 1) * c / (m.z1 + c)
        per_tok[tok] = max(s, 0.0)
    out = [per_tok[t] for t in body]
    return ([0.0] + out) if has_cls else out


def select_mask(scores: Sequence[float], tau: float = DEFAULT_TAU, skip_first: bool = False,
                doc_id: int = 0) -> MaskPlan:
    """Mask every position whose share of the total score exceeds ``tau``.

    When nothing qualifies the single highest-scoring position (lowest index
    on ties) is masked instead.  ``skip_first`` keeps position 0 ([CLS]) out.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    arr = np.asarray(scores, dtype=np.float64)
    start = 1 if skip_first else 0
    total = arr[start:].sum()
    norm = np.zeros_like(arr)
    if total > 0:
        norm[start:] = arr[start:] / total
    picked = [int(i) for i in np.nonzero(norm > tau)[0] if i >= start]
    if not picked and len(arr) > start:
        picked = [start + int(np.argmax(arr[start:]))]
    return MaskPlan(doc_id, frozenset(picked), tau, norm.tolist())


def apply_mask(seq: TokenSequence, plan: MaskPlan) -> tuple[TokenSequence, dict[int, int]]:
    ids = list(seq.ids)
    labels = {}
    for p in sorted(plan.masked_positions):
        if not 0 <= p < len(ids):
            raise IndexError(f"mask position {p} outside sequence of length {len(ids)}")
        labels[p] = ids[p]
        ids[p] = MASK_ID
    return TokenSequence(ids, seq.dropped_sentences), labels


def empirical_mask_rate(seqs: Sequence[TokenSequence], plans: Sequence[MaskPlan]) -> float:
    masked = sum(len(p.masked_positions) for p in plans)
    positions = sum(max(len(s) - 1, 0) for s in seqs)
    return masked / positions if positions else 0.0


def random_mask(seq: TokenSequence, rate: float, rng: np.random.Generator,
                doc_id: int = 0) -> MaskPlan:
    """Independent Bernoulli(rate) masking of non-[CLS] positions, at least one."""
    n = len(seq.ids)
    if n <= 1:
        return MaskPlan(doc_id, frozenset(), 0.0, [0.0] * n)
    draw = rng.random(n - 1) < rate
    picked = [int(i) + 1 for i in np.nonzero(draw)[0]]
    if not picked:
        picked = [int(rng.integers(1, n))]
    return MaskPlan(doc_id, frozenset(picked), 0.0, [0.0] * n)


def bm25_plans(seqs: Sequence[TokenSequence], model: Bm25Model, tau: float) -> list[MaskPlan]:
    return [select_mask(score_tokens(model, s), tau, skip_first=True, doc_id=i)
            for i, s in enumerate(seqs)]
