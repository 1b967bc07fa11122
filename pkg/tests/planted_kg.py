"""Planted block-structured toy knowledge graph for link-prediction checks."""
import numpy as np


def planted_kg(seed=0, n_entities=30, n_blocks=4, n_triples=200, n_test=40):
    """Entity i lives in block i % n_blocks.

    Relation 0 links entities inside a block.  Relation 1 links block 2j to
    block 2j+1; the pairing is asymmetric but needs no cycle, so translation,
    rotation and bilinear scores can all represent it.  Returns
    (train, test, known) with ``known`` holding every sampled triple.
    """
    rng = np.random.default_rng(seed)
    block = np.arange(n_entities) % n_blocks
    cand = [(h, r, t) for h in range(n_entities) for r in (0, 1) for t in range(n_entities)
            if h != t and ((r == 0 and block[t] == block[h]) or
                           (r == 1 and block[h] % 2 == 0 and block[t] == block[h] + 1))]
    pick = rng.choice(len(cand), size=n_triples, replace=False)
    triples = [cand[i] for i in sorted(pick.tolist())]
    order = rng.permutation(n_triples)
    test = [triples[i] for i in order[:n_test]]
    train = [triples[i] for i in order[n_test:]]
    return train, test, set(triples)
