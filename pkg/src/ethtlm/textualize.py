"""Transaction records -> sentences -> token ids."""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable

from .ingest import AccountLedger, RawTransaction

FIELD_NAMES = ("value", "timeStamp", "IO", "gas", "gasPrice")
SPECIALS = ("[PAD]", "[CLS]", "[MASK]", "[UNK]")
PAD_ID, CLS_ID, MASK_ID, UNK_ID = 0, 1, 2, 3
SENTENCE_SEP = "; "
DEFAULT_MAX_LEN = 512

_WEI_PER_ETHER = Decimal(10) ** 18
_WEI_PER_GWEI = Decimal(10) ** 9
_PUNCT = (":", ",", ".", ";")
_DIGITS = tuple("0123456789")
_WORD_RE = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")


@dataclass(frozen=True)
class RetainedFields:
    value: Decimal      # Ether, 4 significant digits
    timeStamp: int      # floor(log2(1 + age in days))
    io: int
    gas: Decimal        # kilo-gas, 3 significant digits
    gasPrice: Decimal   # Gwei, 2 significant digits


def round_sig(x: Decimal, digits: int) -> Decimal:
    if x == 0:
        return Decimal(0)
    exp = x.adjusted() - (digits - 1)
    return x.quantize(Decimal(1).scaleb(exp), rounding=ROUND_HALF_UP)


def format_number(x: Decimal | int) -> str:
    """Plain dot-decimal rendering: no exponent, no trailing zeros."""
    s = format(Decimal(x), "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def age_bucket(tx_time: int, anchor: int) -> int:
    days = max(0, anchor - tx_time) / 86400.0
    return int(math.floor(math.log2(1.0 + days)))


def select_and_scale(tx: RawTransaction, io: int, anchor: int) -> RetainedFields:
    return RetainedFields(
        value=round_sig(Decimal(tx.value) / _WEI_PER_ETHER, 4),
        timeStamp=age_bucket(tx.timeStamp, anchor),
        io=int(io),
        gas=round_sig(Decimal(tx.gas) / 1000, 3),
        gasPrice=round_sig(Decimal(tx.gasPrice) / _WEI_PER_GWEI, 2),
    )


def textualize_record(f: RetainedFields) -> str:
    return (f"value:{format_number(f.value)}, timeStamp:{f.timeStamp}, IO:{f.io}, "
            f"gas:{format_number(f.gas)}, gasPrice:{format_number(f.gasPrice)}")


_SENTENCE_RE = re.compile(
    r"^value:([0-9.]+), timeStamp:([0-9]+), IO:([01]), gas:([0-9.]+), gasPrice:([0-9.]+)$")


def parse_record(text: str) -> RetainedFields:
    m = _SENTENCE_RE.match(text)
    if m is None:
        raise ValueError(f"not a transaction sentence: {text!r}")
    v, ts, io, gas, gp = m.groups()
    return RetainedFields(Decimal(v), int(ts), int(io), Decimal(gas), Decimal(gp))


def account_text(ledger: AccountLedger, anchor: int | None = None) -> str:
    """Sentences for every ledger entry, oldest first, joined by '; '."""
    if not ledger.transactions:
        return ""
    if anchor is None:
        anchor = ledger.transactions[-1][0].timeStamp
    return SENTENCE_SEP.join(textualize_record(select_and_scale(tx, io, anchor))
                             for tx, io in ledger.transactions)


def build_corpus(ledgers: Iterable[AccountLedger]) -> list[tuple[str, str]]:
    return [(led.address, account_text(led)) for led in ledgers]


def write_corpus(path, corpus: Iterable[tuple[str, str]]) -> None:
    with open(path, "w") as fh:
        for addr, text in corpus:
            fh.write(json.dumps({"address": addr, "text": text}) + "\n")


def read_corpus(path) -> list[tuple[str, str]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            obj = json.loads(line)
            out.append((obj["address"], obj["text"]))
    return out


# ---------------------------------------------------------------- vocabulary

def pre_tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text)


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError("special tokens must occupy ids 0-3")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._word_cache: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode_word(self, word: str) -> list[int]:
        hit = self._word_cache.get(word)
        if hit is not None:
            return hit
        out: list[int] = []
        start, n = 0, len(word)
        while start < n:
            end = n
            piece = None
            while end > start:
                sub = word[start:end] if start == 0 else "##" + word[start:end]
                piece = self.index.get(sub)
                if piece is not None:
                    break
                end -= 1
            if piece is None:
                out.append(UNK_ID)
                start += 1
            else:
                out.append(piece)
                start = end
        self._word_cache[word] = out
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text().rstrip("\n").split("\n"))


def train_vocab(corpus: Iterable[str], max_size: int = 1000) -> Vocabulary:
    """Frequency-ranked subword inventory for greedy longest-match tokenization.

    Field names, digits, and the sentence punctuation are always whole tokens
    (both word-initial and ``##`` continuation forms for digits).  Remaining
    slots go to single characters seen in the corpus, then to multi-character
    pieces ranked by ``count * (len - 1)``.
    """
    if max_size < 64:
        raise ValueError("max_size must be at least 64")
    words: Counter[str] = Counter()
    for text in corpus:
        words.update(pre_tokenize(text))

    tokens: list[str] = list(SPECIALS)
    seen: set[str] = set(tokens)

    def push(tok: str) -> None:
        if tok not in seen and len(tokens) < max_size:
            seen.add(tok)
            tokens.append(tok)

    for tok in (*FIELD_NAMES, *_PUNCT, *_DIGITS, *("##" + d for d in _DIGITS)):
        push(tok)

    chars: Counter[str] = Counter()
    pieces: Counter[str] = Counter()
    for w, c in words.items():
        for i, ch in enumerate(w):
            chars[ch if i == 0 else "##" + ch] += c
        n = len(w)
        if 1 < n <= 12:
            pieces[w] += c
        for i in range(n):
            for j in range(i + 2, min(n, i + 6) + 1):
                if i == 0 and j == n:
                    continue
                pieces[w[i:j] if i == 0 else "##" + w[i:j]] += c
    for tok, _ in sorted(chars.items(), key=lambda kv: (-kv[1], kv[0])):
        push(tok)
    ranked = sorted(pieces.items(), key=lambda kv: (-kv[1] * (len(kv[0].lstrip("#")) - 1), kv[0]))
    for tok, _ in ranked:
        if len(tokens) >= max_size:
            break
        push(tok)
    return Vocabulary(tokens)


# ---------------------------------------------------------------- tokenization

@dataclass
class TokenSequence:
    ids: list[int]
    dropped_sentences: int = 0

    def __len__(self) -> int:
        return len(self.ids)


def _encode_text(text: str, vocab: Vocabulary) -> list[int]:
    out: list[int] = []
    for w in pre_tokenize(text):
        out.extend(vocab.encode_word(w))
    return out


def tokenize(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """[CLS] + greedy longest-match pieces, keeping the newest whole sentences.

    If even the newest sentence alone exceeds the budget its leading tokens
    are kept; that is the only case in which a sentence gets cut.
    """
    if max_len < 1:
        raise ValueError("max_len must be positive")
    if not text:
        return TokenSequence([CLS_ID])
    sentences = text.split(SENTENCE_SEP)
    budget = max_len - 1
    sep = vocab.id(";")
    kept: list[list[int]] = []
    used = 0
    for sent in reversed(sentences):
        ids = _encode_text(sent, vocab)
        cost = len(ids) + (1 if kept else 0)
        if used + cost > budget:
            if not kept:
                kept.append(ids[:budget])
            break
        kept.append(ids)
        used += cost
    body: list[int] = []
    for i, ids in enumerate(reversed(kept)):
        if i:
            body.append(sep)
        body.extend(ids)
    return TokenSequence([CLS_ID] + body, dropped_sentences=len(sentences) - len(kept))


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    out: list[str] = []
    for i in ids:
        if i in (PAD_ID, CLS_ID):
            continue
        tok = vocab.tokens[i]
        out.append(tok[2:] if tok.startswith("##") else tok)
        if tok in (",", ";"):
            out.append(" ")
    return "".join(out)
