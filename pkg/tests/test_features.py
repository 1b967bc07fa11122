import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ethtlm.features import (CENTRALITY, FEATURE_NAMES, N_FEATURES, STATISTICAL, TEMPORAL,
                             TransactionGraph, build_transaction_graph, compute_centralities,
                             compute_statistical, compute_temporal, expert_feature_matrix,
                             features_from_csv, features_to_csv, normalize_features)
from ethtlm.ingest import INCOMING, OUTGOING, AccountLedger

from centrality_oracle import oracle
from conftest import addr, make_tx

ETH = 10 ** 18
S = {n: i for i, n in enumerate(STATISTICAL)}
T = {n: i for i, n in enumerate(TEMPORAL)}
C = {n: i for i, n in enumerate(CENTRALITY)}


def ledger(entries):
    return AccountLedger(addr(0), sorted(entries, key=lambda e: e[0].timeStamp))


def test_feature_layout():
    assert N_FEATURES == 26 and len(set(FEATURE_NAMES)) == 26


def test_single_incoming():
    f = compute_statistical(ledger([(make_tx(addr(1), addr(0), value=5 * ETH), INCOMING)]))
    assert (f[S["in_degree"]], f[S["out_degree"]], f[S["max_in"]]) == (1, 0, 5)
    assert f[S["balance"]] == 5 and f[S["active_days"]] == 1
    assert f[S["direction_ratio"]] == 2.0  # zero outgoing: in_degree + 1


def test_two_outgoing():
    f = compute_statistical(ledger([(make_tx(addr(0), addr(1), value=v * ETH, ts=1000 + v), OUTGOING)
                                    for v in (1, 3)]))
    assert (f[S["avg_out"]], f[S["max_out"]], f[S["min_out"]]) == (2, 3, 1)
    assert f[S["min_in"]] == 0 and f[S["max_in"]] == 0


@given(st.lists(st.tuples(st.integers(0, 10 ** 22), st.booleans(), st.integers(1, 10 ** 8)),
                min_size=1, max_size=50), st.integers(1, 49))
def test_balance_and_additive_features(rows, cut):
    entries = [(make_tx(addr(0), addr(1), value=v, ts=t), OUTGOING) if out
               else (make_tx(addr(1), addr(0), value=v, ts=t), INCOMING) for v, out, t in rows]
    f = compute_statistical(ledger(entries))
    # oracle: exact rational signed sum
    from fractions import Fraction
    want = sum(Fraction(v, ETH) * (-1 if out else 1) for v, out, _ in rows)
    assert f[S["balance"]] == pytest.approx(float(want), rel=1e-12, abs=1e-12)
    a, b = entries[:cut], entries[cut:]
    fa, fb = compute_statistical(ledger(a)), compute_statistical(ledger(b))
    for name in ("in_degree", "out_degree"):
        assert f[S[name]] == fa[S[name]] + fb[S[name]]
    assert f[S["balance"]] == pytest.approx(fa[S["balance"]] + fb[S["balance"]], rel=1e-12, abs=1e-9)


def test_temporal_recent_window():
    now = 1_700_000_000
    entries = [(make_tx(addr(1), addr(0), ts=now - 60 * i), INCOMING) for i in range(5)]
    f = compute_temporal(ledger(entries))
    assert f[T["freq_short"]] == f[T["freq_long"]] == 5


def test_temporal_old_tx_excluded():
    now = 1_700_000_000
    entries = [(make_tx(addr(1), addr(0), ts=now - 40 * 86400), INCOMING),
               (make_tx(addr(0), addr(1), ts=now), OUTGOING)]
    f = compute_temporal(ledger(entries))
    assert f[T["freq_long"]] == 1 and f[T["freq_in_long"]] == 0
    solo = compute_temporal(ledger(entries[:1]))
    assert solo[T["freq_long"]] == 1  # the anchor itself


@given(st.lists(st.tuples(st.integers(0, 60 * 86400), st.booleans()), min_size=1, max_size=40))
def test_temporal_matches_interval_filter(rows):
    base = 1_600_000_000
    entries = [(make_tx(addr(0), addr(1), ts=base + t), OUTGOING) if o
               else (make_tx(addr(1), addr(0), ts=base + t), INCOMING) for t, o in rows]
    f = compute_temporal(ledger(entries))
    anchor = base + max(t for t, _ in rows)
    for win, suffix in ((86400, "short"), (2592000, "long")):
        sel = [o for t, o in rows if anchor - win < base + t <= anchor]
        assert f[T[f"freq_{suffix}"]] == len(sel)
        assert f[T[f"freq_out_{suffix}"]] == sum(sel)
        assert f[T[f"freq_in_{suffix}"]] == len(sel) - sum(sel)


def graph(n, edges):
    nodes = [addr(i) for i in range(n)]
    return nodes, TransactionGraph.from_edges(nodes, [(nodes[u], nodes[v]) for u, v in edges])


def test_star_degree():
    nodes, g = graph(4, [(0, 1), (0, 2), (0, 3)])
    assert compute_centralities(g)[nodes[0]][C["degree_c"]] == 1.0


def test_path_betweenness():
    nodes, g = graph(3, [(0, 1), (1, 2)])
    assert compute_centralities(g)[nodes[1]][C["betweenness"]] == 0.5


def test_triangle_clustering():
    nodes, g = graph(3, [(0, 1), (1, 2), (2, 0)])
    c = compute_centralities(g)
    assert all(c[v][C["clustering"]] == 1.0 for v in nodes)


def random_digraph(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    adj = (rng.random((n, n)) < rng.uniform(0.1, 0.6)).astype(int)
    np.fill_diagonal(adj, 0)
    return adj


def normwise_error(got, ref):
    scale = np.max(np.abs(ref))
    return np.max(np.abs(got - ref)) / scale if scale > 0 else np.max(np.abs(got))


@pytest.mark.parametrize("seed", range(20))
def test_centralities_match_oracle(seed):
    adj = random_digraph(seed)
    n = len(adj)
    nodes, g = graph(n, zip(*np.nonzero(adj)))
    c = compute_centralities(g)
    got = np.array([c[v] for v in nodes])
    ref = oracle(adj)
    for name in CENTRALITY:
        assert normwise_error(got[:, C[name]], ref[name]) <= 1e-6, name


@given(st.integers(0, 10 ** 6), st.randoms())
def test_centralities_permutation_equivariant(seed, rnd):
    adj = random_digraph(seed)
    n = len(adj)
    perm = list(range(n))
    rnd.shuffle(perm)
    nodes, g = graph(n, zip(*np.nonzero(adj)))
    _, g2 = graph(n, [(perm[u], perm[v]) for u, v in zip(*np.nonzero(adj))])
    c1, c2 = compute_centralities(g), compute_centralities(g2)
    for i in range(n):
        np.testing.assert_allclose(c1[nodes[i]], c2[nodes[perm[i]]], rtol=1e-6, atol=1e-9)


def test_normalize_constant_column_and_moments():
    rng = np.random.default_rng(0)
    m = rng.lognormal(0, 2, (30, 26))
    m[:, 3] = 7.0
    out, mu, sd = normalize_features(m)
    assert np.all(out[:, 3] == 0)
    keep = [j for j in range(26) if j != 3]
    np.testing.assert_allclose(out[:, keep].mean(0), 0, atol=1e-9)
    np.testing.assert_allclose(out[:, keep].std(0), 1, atol=1e-9)


def test_normalize_uses_train_statistics_only():
    rng = np.random.default_rng(1)
    m = rng.normal(0, 50, (20, 26))
    train = list(range(0, 20, 2))
    out, _, _ = normalize_features(m, train)
    # two-pass oracle
    t = np.sign(m) * np.log1p(np.abs(m))
    mu = sum(t[i] for i in train) / len(train)
    sd = np.sqrt(sum((t[i] - mu) ** 2 for i in train) / len(train))
    np.testing.assert_allclose(out, (t - mu) / sd, rtol=1e-12, atol=1e-12)
    assert np.all(np.isfinite(out))


def test_feature_csv_round_trip():
    txs = [make_tx(addr(i % 4), addr((i + 1) % 4), ts=1000 + i) for i in range(10)]
    from ethtlm.ingest import build_account_ledgers
    led = build_account_ledgers(txs)
    addrs, m = expert_feature_matrix(led, build_transaction_graph(txs))
    a2, m2 = features_from_csv(features_to_csv(addrs, m))
    assert a2 == addrs and np.array_equal(m, m2)
    assert m.shape == (4, 26)
