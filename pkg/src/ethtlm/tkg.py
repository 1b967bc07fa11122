"""Transaction knowledge graph: triples, bounded 2-hop retrieval, filtered negatives."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import ExhaustedCandidates, UnknownEntity
from .features import features_from_csv, features_to_csv
from .ingest import RawTransaction

EXTERNAL, CONTRACT = 0, 1
RELATIONS = ("external", "contract")
MAX_REJECTIONS = 100

Triple = tuple[int, int, int]


@dataclass
class Tkg:
    entities: list[str]
    triples: list[Triple]
    node_features: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {a: i for i, a in enumerate(self.entities)}
        self.triple_set = set(self.triples)
        n = len(self.entities)
        nbrs: list[set[int]] = [set() for _ in range(n)]
        self._out: list[list[int]] = [[] for _ in range(n)]
        for k, (h, _, t) in enumerate(self.triples):
            self._out[h].append(k)
            if h != t:
                nbrs[h].add(t)
                nbrs[t].add(h)
        self.degree = np.asarray([len(s) for s in nbrs], dtype=np.int64)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        self.indptr[1:] = np.cumsum(self.degree)
        self.indices = np.asarray([w for s in nbrs for w in sorted(s)], dtype=np.int64)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def entity_id(self, entity) -> int:
        if isinstance(entity, (int, np.integer)):
            if 0 <= int(entity) < self.n_entities:
                return int(entity)
            raise UnknownEntity(entity)
        try:
            return self.index[entity]
        except KeyError:
            raise UnknownEntity(entity) from None

    def neighbors(self, e: int) -> np.ndarray:
        return self.indices[self.indptr[e]:self.indptr[e + 1]]

    def induced_triples(self, nodes: Iterable[int]) -> list[Triple]:
        keep = set(int(v) for v in nodes)
        out = []
        for h in sorted(keep):
            for k in self._out[h]:
                t = self.triples[k][2]
                if t in keep:
                    out.append(self.triples[k])
        return out


def relation_of(tx: RawTransaction) -> tuple[int, str]:
    """(relation id, tail address) for one transaction."""
    if not tx.to and tx.contractAddress:
        return CONTRACT, tx.contractAddress
    if tx.methodId or tx.functionName:
        return CONTRACT, tx.to
    return EXTERNAL, tx.to


def build_tkg(txs: Iterable[RawTransaction], features: Mapping[str, Sequence[float]]) -> Tkg:
    """One triple per distinct (sender, relation, receiver); ids follow sorted address order."""
    txs = list(txs)
    addrs: set[str] = set()
    raw: set[tuple[str, int, str]] = set()
    for tx in txs:
        rel, tail = relation_of(tx)
        addrs.add(tx.sender)
        addrs.add(tail)
        raw.add((tx.sender, rel, tail))
    entities = sorted(addrs)
    missing = [a for a in entities if a not in features]
    if missing:
        raise ValueError(f"features missing for {len(missing)} entities, e.g. {missing[0]}")
    index = {a: i for i, a in enumerate(entities)}
    triples = sorted((index[h], r, index[t]) for h, r, t in raw)
    width = len(next(iter(features.values()))) if features else 0
    feats = np.asarray([list(features[a]) for a in entities], dtype=np.float64)
    return Tkg(entities, triples, feats.reshape(len(entities), width))


@dataclass
class Subgraph:
    nodes: np.ndarray       # global entity ids, anchor first
    hops: np.ndarray
    triples: list[Triple]   # induced, global ids
    anchor: int

    def local_index(self) -> dict[int, int]:
        return {int(v): i for i, v in enumerate(self.nodes)}


def retrieve_subgraph(kg: Tkg, anchor, max_nodes: int = 100, seed: int = 0,
                      sampling: bool = False) -> Subgraph:
    """Anchor plus up to ``max_nodes - 1`` neighbours within two undirected hops.

    Hop-1 nodes are admitted before hop-2; inside a hop the order is by
    descending degree then entity id, or a seeded shuffle when ``sampling``.
    """
    a = kg.entity_id(anchor)
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    if sampling:
        nodes, hops = _sampled_two_hop(kg, a, max_nodes, np.random.default_rng(seed))
    else:
        nodes, hops = _kernels.two_hop(kg.indptr, kg.indices, kg.degree, a, max_nodes)
    return Subgraph(np.asarray(nodes), np.asarray(hops), kg.induced_triples(nodes), a)


def _sampled_two_hop(kg: Tkg, a: int, max_nodes: int, rng: np.random.Generator):
    nodes, hops, seen, frontier = [a], [0], {a}, [a]
    for hop in (1, 2):
        if len(nodes) >= max_nodes:
            break
        cand = sorted({int(w) for u in frontier for w in kg.neighbors(u)} - seen)
        cand = [cand[i] for i in rng.permutation(len(cand))][:max_nodes - len(nodes)]
        nodes += cand
        hops += [hop] * len(cand)
        seen.update(cand)
        frontier = cand
    return np.asarray(nodes, dtype=np.int64), np.asarray(hops, dtype=np.int64)


def sample_negatives(kg: Tkg, pos: Triple, k: int, seed: int,
                     candidates: Sequence[int] | None = None) -> list[Triple]:
    """``k`` filtered corruptions of ``pos`` (fair coin for head vs tail).

    ``candidates`` restricts replacement entities (e.g. to a retrieved
    subgraph); the default is every entity in the graph.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    pool = np.asarray(candidates if candidates is not None else np.arange(kg.n_entities),
                      dtype=np.int64)
    h, r, t = pos
    out: list[Triple] = []
    for _ in range(k):
        for _attempt in range(MAX_REJECTIONS):
            e = int(pool[rng.integers(len(pool))])
            cand = (e, r, t) if rng.random() < 0.5 else (h, r, e)
            if cand not in kg.triple_set:
                out.append(cand)
                break
        else:
            raise ExhaustedCandidates(f"no valid corruption of {pos} after {MAX_REJECTIONS} draws")
    return out


# ---------------------------------------------------------------- files

def write_tkg(kg: Tkg, out_dir) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"{kg.entities[h]}\t{RELATIONS[r]}\t{kg.entities[t]}" for h, r, t in kg.triples]
    (d / "triples.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))
    (d / "node_features.csv").write_text(features_to_csv(kg.entities, kg.node_features))


def read_tkg(in_dir) -> Tkg:
    d = Path(in_dir)
    entities, feats = features_from_csv((d / "node_features.csv").read_text())
    index = {a: i for i, a in enumerate(entities)}
    triples = []
    for line in (d / "triples.tsv").read_text().splitlines():
        if line:
            h, r, t = line.split("\t")
            triples.append((index[h], RELATIONS.index(r), index[t]))
    return Tkg(entities, sorted(set(triples)), feats)

