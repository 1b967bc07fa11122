from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ethtlm.errors import ExhaustedCandidates, UnknownEntity
from ethtlm.tkg import (CONTRACT, EXTERNAL, Tkg, build_tkg, read_tkg, retrieve_subgraph, sample_negatives,
                        write_tkg)

from conftest import addr, make_tx


def feats(addrs, dim=3):
    return {a: [float(i)] * dim for i, a in enumerate(sorted(addrs))}


def kg_from_edges(n, edges):
    return Tkg([addr(i) for i in range(n)], sorted(set(edges)), np.zeros((n, 2)))


def test_relation_types():
    plain = make_tx(addr(0), addr(1))
    call = make_tx(addr(0), addr(2), method="0xa9059cbb")
    kg = build_tkg([plain, call], feats({addr(0), addr(1), addr(2)}))
    a, b, c = (kg.index[addr(i)] for i in range(3))
    assert set(kg.triples) == {(a, EXTERNAL, b), (a, CONTRACT, c)}


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.booleans()), max_size=100))
def test_triples_are_deduplicated_and_idempotent(rows):
    txs = [make_tx(addr(a), addr(b), method="0xa9059cbb" if c else "") for a, b, c in rows]
    f = feats({addr(i) for i in range(10)})
    kg = build_tkg(txs, f)
    oracle = {(addr(a), int(c), addr(b)) for a, b, c in rows}
    assert len(kg.triples) == len(oracle)
    again = build_tkg(list(reversed(txs)), f)
    assert again.triples == kg.triples and again.entities == kg.entities


def test_missing_features_rejected():
    with pytest.raises(ValueError):
        build_tkg([make_tx(addr(0), addr(1))], {addr(0): [0.0]})


def test_chain_two_hops():
    kg = kg_from_edges(4, [(0, 0, 1), (1, 0, 2), (2, 0, 3)])
    sub = retrieve_subgraph(kg, addr(0))
    assert set(sub.nodes.tolist()) == {0, 1, 2}
    assert sub.nodes[0] == 0 and sub.anchor == 0


def test_isolated_anchor():
    kg = kg_from_edges(3, [(1, 0, 2)])
    sub = retrieve_subgraph(kg, 0)
    assert sub.nodes.tolist() == [0] and sub.triples == []


def test_hub_truncated_to_hop_one():
    kg = kg_from_edges(202, [(0, 0, i) for i in range(1, 201)] + [(1, 0, 201)])
    sub = retrieve_subgraph(kg, 0)
    assert len(sub.nodes) == 100 and max(sub.hops) == 1


def test_unknown_anchor():
    with pytest.raises(UnknownEntity):
        retrieve_subgraph(kg_from_edges(2, [(0, 0, 1)]), "nope")


def bfs_depth(kg, anchor):
    depth = {anchor: 0}
    q = deque([anchor])
    while q:
        u = q.popleft()
        for w in kg.neighbors(u):
            if int(w) not in depth:
                depth[int(w)] = depth[u] + 1
                q.append(int(w))
    return depth


@given(st.integers(0, 10 ** 6), st.integers(1, 30), st.booleans())
def test_subgraph_contract(seed, max_nodes, sampling):
    rng = np.random.default_rng(seed)
    n = 60
    edges = [(int(rng.integers(n)), int(rng.integers(2)), int(rng.integers(n))) for _ in range(150)]
    kg = kg_from_edges(n, edges)
    anchor = int(rng.integers(n))
    sub = retrieve_subgraph(kg, anchor, max_nodes, seed=seed, sampling=sampling)
    depth = bfs_depth(kg, anchor)
    assert len(sub.nodes) <= max_nodes and len(set(sub.nodes.tolist())) == len(sub.nodes)
    for v, h in zip(sub.nodes.tolist(), sub.hops.tolist()):
        assert depth[v] == h <= 2
    keep = set(sub.nodes.tolist())
    assert set(sub.triples) == {t for t in kg.triples if t[0] in keep and t[2] in keep}


def test_negative_enumeration():
    kg = kg_from_edges(3, [(0, 0, 1)])
    seen = set()
    for s in range(200):
        seen.update(sample_negatives(kg, (0, 0, 1), 1, seed=s))
    tails = {t for t in seen if t[0] == 0}
    assert tails == {(0, 0, 0), (0, 0, 2)}


def test_negatives_reproducible_and_filtered():
    rng = np.random.default_rng(0)
    edges = {(int(rng.integers(10)), 0, int(rng.integers(10))) for _ in range(30)}
    kg = kg_from_edges(10, edges)
    pos = sorted(edges)[0]
    assert sample_negatives(kg, pos, 5, seed=3) == sample_negatives(kg, pos, 5, seed=3)
    negs = [t for s in range(200) for t in sample_negatives(kg, pos, 5, seed=s)]
    assert len(negs) == 1000 and not set(negs) & kg.triple_set


def test_negatives_exhausted():
    kg = kg_from_edges(2, [(0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 0, 1)])
    with pytest.raises(ExhaustedCandidates):
        sample_negatives(kg, (0, 0, 1), 1, seed=0)


def test_write_read_round_trip(tmp_path):
    txs = [make_tx(addr(i), addr((i * 3) % 7), method="0xa9059cbb" if i % 2 else "") for i in range(7)]
    kg = build_tkg(txs, feats({addr(i) for i in range(7)}, dim=26))
    write_tkg(kg, tmp_path)
    back = read_tkg(tmp_path)
    assert back.entities == kg.entities and back.triples == kg.triples
    assert np.array_equal(back.node_features, kg.node_features)
