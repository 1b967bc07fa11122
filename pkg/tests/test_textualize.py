import string
from decimal import Decimal

from hypothesis import given, strategies as st

from ethtlm.ingest import build_account_ledgers
from ethtlm.textualize import (CLS_ID, SENTENCE_SEP, UNK_ID, RetainedFields, account_text, detokenize,
                               parse_record, select_and_scale, textualize_record, tokenize, train_vocab)

from conftest import addr, make_tx

EXAMPLE = "value:0.3, timeStamp:14, IO:0, gas:21, gasPrice:3.1"


def _corpus(n=40, seed=0):
    import numpy as np
    rng = np.random.default_rng(seed)
    txs = [make_tx(addr(int(rng.integers(5))), addr(int(rng.integers(5, 10))),
                   ts=1_600_000_000 - int(rng.integers(0, 10 ** 8)), value=int(rng.integers(0, 10 ** 6)) * 10 ** 15,
                   gas=int(rng.integers(21_000, 300_000)), gas_price=int(rng.integers(10 ** 9, 10 ** 11)))
           for _ in range(n)]
    return [account_text(l) for l in build_account_ledgers(txs).values()]


def test_select_and_scale_units():
    tx = make_tx(addr(0), addr(1), ts=1000, value=3 * 10 ** 17, gas=21_000, gas_price=3_100_000_000)
    f = select_and_scale(tx, 0, anchor=1000)
    assert f.value == Decimal("0.3")
    assert f.gas == Decimal("21")
    assert f.timeStamp == 0
    assert f.gasPrice == Decimal("3.1")


def test_textualize_record_examples():
    assert textualize_record(RetainedFields(Decimal("0.3"), 14, 0, Decimal(21), Decimal("3.1"))) == EXAMPLE
    zero = RetainedFields(Decimal(0), 0, 1, Decimal(0), Decimal(0))
    assert textualize_record(zero) == "value:0, timeStamp:0, IO:1, gas:0, gasPrice:0"


def _sig(digits):
    return st.builds(lambda m, e: Decimal(m).scaleb(e), st.integers(0, 10 ** digits - 1), st.integers(-8, 6))


@given(_sig(4), st.integers(0, 40), st.integers(0, 1), _sig(3), _sig(2))
def test_parse_inverts_textualize(v, ts, io, gas, gp):
    f = RetainedFields(v, ts, io, gas, gp)
    back = parse_record(textualize_record(f))
    assert back == f


def test_field_names_are_single_tokens():
    vocab = train_vocab(_corpus(), 200)
    for name in ("value", "gas", "gasPrice", "timeStamp", "IO"):
        assert name in vocab.index


def test_vocab_size_cap():
    assert len(train_vocab(_corpus(), 64)) <= 64


@given(st.text(alphabet=string.printable, max_size=60))
def test_unseen_strings_tokenize(text):
    vocab = train_vocab(_corpus(), 64)
    seq = tokenize(text, vocab)
    assert seq.ids[0] == CLS_ID
    assert all(0 <= i < len(vocab) for i in seq.ids)


def test_unknown_character_maps_to_unk():
    vocab = train_vocab(_corpus(), 64)
    assert tokenize("é", vocab).ids == [CLS_ID, UNK_ID]


def test_tokenize_whole_token_vocab():
    vocab = train_vocab([EXAMPLE], 100)
    ids = tokenize("value:0.3", vocab).ids
    assert ids == [CLS_ID] + [vocab.index[t] for t in ("value", ":", "0", ".", "3")]
    assert tokenize("", vocab).ids == [CLS_ID]


def test_detokenize_reproduces_sentences():
    texts = _corpus()
    vocab = train_vocab(texts, 300)
    for t in texts:
        assert detokenize(tokenize(t, vocab, 10 ** 6).ids, vocab) == t


@given(st.integers(2, 80))
def test_truncation_keeps_newest_whole_sentences(max_len):
    texts = _corpus()
    vocab = train_vocab(texts, 300)
    text = max(texts, key=len)
    seq = tokenize(text, vocab, max_len)
    assert len(seq) <= max_len
    assert tokenize(text, vocab, max_len).ids == seq.ids
    sentences = text.split(SENTENCE_SEP)
    kept = sentences[seq.dropped_sentences:]
    full = tokenize(SENTENCE_SEP.join(kept), vocab, 10 ** 6).ids
    if seq.dropped_sentences < len(sentences) - 1 or full == seq.ids:
        assert seq.ids == full
    else:
        # only the newest sentence survives, cut to the budget
        assert seq.ids == full[:max_len]


def test_default_max_len_is_512():
    texts = _corpus(400)
    vocab = train_vocab(texts, 300)
    assert max(len(tokenize(t, vocab)) for t in texts) <= 512
