import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ethtlm.errors import EmptyCorpus
from ethtlm.masking import (DEFAULT_TAU, apply_mask, bm25_plans, empirical_mask_rate, fit_bm25,
                            random_mask, score_tokens, select_mask)
from ethtlm.textualize import CLS_ID, MASK_ID, TokenSequence

from bm25_oracle import oracle_scores


def seq(*ids):
    return TokenSequence([CLS_ID, *ids])


def test_idf_examples():
    corpus = [seq(10, 11) if i < 2 else seq(11) for i in range(10)]
    m = fit_bm25(corpus)
    assert m.idf[10] == pytest.approx(1.2039728043259361, abs=1e-15)
    assert m.idf[11] == pytest.approx(math.log(10 / 11), abs=1e-15) and m.idf[11] < 0


def test_avgdl_excludes_cls():
    m = fit_bm25([seq(5, 6, 7)] * 4)
    assert m.avgdl == 3.0


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        fit_bm25([])


def test_plain_bm25_hand_value():
    # |C|=10, token 20 appears in one doc twice; that doc has average length
    docs = [seq(20, 20, 5, 6)] + [seq(7, 8, 9, 4) for _ in range(9)]
    m = fit_bm25(docs, variant="bm25")
    s = score_tokens(m, docs[0])
    assert s[1] == pytest.approx(2.212977129596888, rel=1e-12)
    assert s[0] == 0.0


def test_equal_docs_equal_scores():
    docs = [seq(1 + 10, 12, 12), seq(13, 12, 12), seq(14, 15, 16)]
    m = fit_bm25(docs)
    assert score_tokens(m, docs[0])[2] == score_tokens(m, docs[1])[2]


def test_absent_token_scores_nothing():
    m = fit_bm25([seq(10, 11), seq(12)])
    assert len(score_tokens(m, seq(10))) == 2


corpora = st.lists(st.lists(st.integers(4, 30), min_size=0, max_size=50), min_size=1, max_size=20)


@given(corpora, st.sampled_from(["bm25", "bm25l"]), st.floats(0.5, 2.0), st.floats(0.0, 1.0))
def test_scores_match_direct_formula(docs, variant, z1, b):
    m = fit_bm25([seq(*d) for d in docs], z1=z1, b=b, variant=variant)
    for d in docs:
        got = score_tokens(m, seq(*d))[1:]
        want = oracle_scores(docs, d, z1, b, 0.5, variant)
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=0)


def test_select_mask_examples():
    assert select_mask([5, 3, 2], 0.25).masked_positions == {0, 1}
    assert select_mask([5, 3, 2], 0.99).masked_positions == {0}
    assert DEFAULT_TAU == 0.1


score_vectors = st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=40)


@given(score_vectors, st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_tau_monotone(scores, t1, t2):
    lo, hi = sorted((t1, t2))
    arr = np.asarray(scores)
    total = arr.sum()
    if total <= 0:
        return
    above = lambda t: {i for i, v in enumerate(arr / total) if v > t}
    a, b = select_mask(scores, lo).masked_positions, select_mask(scores, hi).masked_positions
    if above(hi):
        assert b <= a


@given(score_vectors, st.floats(0.01, 0.98), st.sampled_from([2.0 ** -10, 0.5, 2.0, 2.0 ** 20]))
def test_scale_invariant(scores, tau, c):
    # power-of-two factors scale exactly, so the normalised shares are bit-identical
    base = select_mask(scores, tau).masked_positions
    assert select_mask([c * s for s in scores], tau).masked_positions == base


@given(score_vectors, st.floats(0.01, 0.98), st.floats(0.1, 10.0))
def test_scale_invariant_away_from_threshold(scores, tau, c):
    total = sum(scores)
    if total > 0 and any(abs(s / total - tau) < 1e-9 for s in scores):
        return
    base = select_mask(scores, tau).masked_positions
    assert select_mask([c * s for s in scores], tau).masked_positions == base


def test_apply_mask_examples():
    masked, labels = apply_mask(seq(7, 8), select_mask([0, 1, 0], 0.5))
    assert masked.ids == [CLS_ID, MASK_ID, 8] and labels == {1: 7}
    from ethtlm.masking import MaskPlan
    same, none = apply_mask(seq(7, 8), MaskPlan(0, frozenset(), 0.1, []))
    assert same.ids == [CLS_ID, 7, 8] and none == {}


@given(st.lists(st.integers(4, 50), min_size=1, max_size=30), st.integers(0, 10 ** 6))
def test_apply_mask_leaves_other_positions(ids, seed):
    s = seq(*ids)
    plan = random_mask(s, 0.3, np.random.default_rng(seed))
    masked, labels = apply_mask(s, plan)
    for i, (a, b) in enumerate(zip(s.ids, masked.ids)):
        if i in plan.masked_positions:
            assert b == MASK_ID and labels[i] == a
        else:
            assert a == b
    assert 0 not in plan.masked_positions


def test_random_mask_rate_matches_plan_rate():
    rng = np.random.default_rng(0)
    seqs = [seq(*rng.integers(4, 40, 60)) for _ in range(200)]
    m = fit_bm25(seqs)
    plans = bm25_plans(seqs, m, 0.1)
    rate = empirical_mask_rate(seqs, plans)
    rplans = [random_mask(s, rate, np.random.default_rng([1, i])) for i, s in enumerate(seqs)]
    assert abs(empirical_mask_rate(seqs, rplans) - rate) < 0.01
    # cls never masked by the biased plans either
    assert all(0 not in p.masked_positions for p in plans)
