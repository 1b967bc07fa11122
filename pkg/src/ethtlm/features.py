"""The 26 per-account expert features: statistical, temporal-window, and centrality."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .errors import NonConvergence
from .ingest import INCOMING, OUTGOING, AccountLedger, RawTransaction

STATISTICAL = ("out_degree", "in_degree", "direction_ratio", "max_out", "min_out", "max_in",
               "min_in", "avg_out", "avg_in", "balance", "lifetime_days", "active_days")
TEMPORAL = ("freq_long", "freq_short", "freq_in_long", "freq_in_short", "freq_out_long",
            "freq_out_short")
CENTRALITY = ("katz", "betweenness", "degree_c", "closeness", "clustering", "eigenvector",
              "indegree_c", "outdegree_c")
FEATURE_NAMES = STATISTICAL + TEMPORAL + CENTRALITY
N_FEATURES = len(FEATURE_NAMES)

SHORT_WINDOW = 86_400
LONG_WINDOW = 2_592_000
WEI_PER_ETHER = 10 ** 18


def compute_statistical(ledger: AccountLedger) -> list[float]:
    outs = [tx.value / WEI_PER_ETHER for tx, io in ledger.transactions if io == OUTGOING]
    ins = [tx.value / WEI_PER_ETHER for tx, io in ledger.transactions if io == INCOMING]
    n_out, n_in = len(outs), len(ins)
    ratio = n_in / n_out if n_out else float(n_in + 1)
    if ledger.transactions:
        times = [tx.timeStamp for tx, _ in ledger.transactions]
        lifetime = (max(times) - min(times)) / 86400.0
        active = len({t // 86400 for t in times})
    else:
        lifetime, active = 0.0, 0
    return [
        float(n_out), float(n_in), ratio,
        max(outs, default=0.0), min(outs, default=0.0),
        max(ins, default=0.0), min(ins, default=0.0),
        sum(outs) / n_out if n_out else 0.0,
        sum(ins) / n_in if n_in else 0.0,
        math.fsum(ins) - math.fsum(outs),
        lifetime, float(active),
    ]


def compute_temporal(ledger: AccountLedger, short: int = SHORT_WINDOW,
                     long: int = LONG_WINDOW) -> list[float]:
    """Counts inside (anchor - window, anchor], anchored at the newest transaction."""
    if not ledger.transactions:
        return [0.0] * 6
    anchor = max(tx.timeStamp for tx, _ in ledger.transactions)
    counts = {}
    for name, win in (("long", long), ("short", short)):
        lo = anchor - win
        sel = [io for tx, io in ledger.transactions if lo < tx.timeStamp <= anchor]
        counts[name] = (len(sel), sel.count(INCOMING), sel.count(OUTGOING))
    return [float(counts["long"][0]), float(counts["short"][0]),
            float(counts["long"][1]), float(counts["short"][1]),
            float(counts["long"][2]), float(counts["short"][2])]


# ---------------------------------------------------------------- graph

@dataclass
class TransactionGraph:
    """Directed address graph; parallel transactions collapse into one weighted edge."""
    nodes: list[str]
    index: dict[str, int]
    weights: dict[tuple[int, int], int]

    @property
    def n(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_edges(cls, nodes: Sequence[str], edges: Iterable[tuple[str, str]]) -> "TransactionGraph":
        nodes = sorted(set(nodes))
        index = {a: i for i, a in enumerate(nodes)}
        weights: dict[tuple[int, int], int] = {}
        for u, v in edges:
            if u == v:
                continue
            key = (index[u], index[v])
            weights[key] = weights.get(key, 0) + 1
        return cls(nodes, index, weights)

    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency, A[u, v] = 1 iff an edge u -> v exists."""
        if not self.weights:
            return sp.csr_matrix((self.n, self.n))
        rows, cols = zip(*sorted(self.weights))
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n))


def tx_endpoint(tx: RawTransaction) -> str:
    return tx.to if tx.to else tx.contractAddress


def build_transaction_graph(txs: Iterable[RawTransaction],
                            extra_nodes: Iterable[str] = ()) -> TransactionGraph:
    txs = list(txs)
    nodes = set(extra_nodes)
    edges = []
    for tx in txs:
        t = tx_endpoint(tx)
        nodes.add(tx.sender)
        nodes.add(t)
        edges.append((tx.sender, t))
    return TransactionGraph.from_edges(sorted(nodes), edges)


def _csr_arrays(m: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    m = m.tocsr()
    m.sort_indices()
    return m.indptr.astype(np.int64), m.indices.astype(np.int64)


def spectral_radius_estimate(a: sp.csr_matrix, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a non-negative matrix, per strongly connected component.

    Each irreducible block is power-iterated as (B + I), which is primitive,
    and the Collatz-Wielandt bounds min(Bx/x) <= rho <= max(Bx/x) give a
    stopping rule.  The midpoint of the final bounds is returned.
    """
    n = a.shape[0]
    if n == 0 or a.nnz == 0:
        return 0.0
    n_comp, label = connected_components(a, directed=True, connection="strong")
    rho = 0.0
    for c in range(n_comp):
        idx = np.flatnonzero(label == c)
        if len(idx) < 2:
            continue  # no self loops, so a singleton block is 0
        b = a[idx][:, idx].tocsr()
        x = np.ones(len(idx))
        lo, hi = 0.0, math.inf
        for _ in range(max_iter):
            y = b @ x
            ratio = y / x
            lo, hi = max(lo, float(ratio.min())), min(hi, float(ratio.max()))
            if hi - lo <= tol * max(hi, 1.0):
                break
            x = y + x
            x /= x.max()
        rho = max(rho, 0.5 * (lo + hi))
    return rho


def katz_centrality(a: sp.csr_matrix, beta: float = 1.0, tol: float = 1e-8,
                    max_iter: int = 1000) -> tuple[np.ndarray, float]:
    """x = alpha A^T x + beta, alpha = 0.9 / max(rho, 1).  Unnormalised.

    A 0/1 adjacency has spectral radius 0 (acyclic) or >= 1, so the floor of
    1 only matters for DAGs, where any alpha converges.
    """
    n = a.shape[0]
    alpha = 0.9 / max(spectral_radius_estimate(a), 1.0)
    at = a.T.tocsr()
    x = np.full(n, beta, dtype=np.float64)
    for _ in range(max_iter):
        nxt = alpha * (at @ x) + beta
        if not np.all(np.isfinite(nxt)):
            break
        if np.max(np.abs(nxt - x), initial=0.0) < tol:
            return nxt, alpha
        x = nxt
    raise NonConvergence("katz", max_iter)


def eigenvector_centrality(s: sp.csr_matrix, tol: float = 1e-8,
                           max_iter: int = 1000) -> np.ndarray:
    """Dominant eigenvector of the symmetric 0/1 matrix ``s`` via power iteration on s + I.

    The identity shift keeps bipartite graphs from oscillating between the
    +lambda and -lambda eigenvectors.
    """
    n = s.shape[0]
    if n == 0:
        return np.zeros(0)
    x = np.ones(n) / math.sqrt(n)
    for _ in range(max_iter):
        nxt = s @ x + x
        nxt /= np.linalg.norm(nxt)
        if np.max(np.abs(nxt - x)) < tol:
            return nxt
        x = nxt
    raise NonConvergence("eigenvector", max_iter)


def compute_centralities(g: TransactionGraph, tol: float = 1e-8,
                         max_iter: int = 1000) -> dict[str, list[float]]:
    n = g.n
    if n == 0:
        return {}
    a = g.adjacency()
    out_deg = np.asarray((a > 0).sum(axis=1)).ravel().astype(np.float64)
    in_deg = np.asarray((a > 0).sum(axis=0)).ravel().astype(np.float64)
    denom = float(n - 1) if n > 1 else 1.0
    deg_c = (out_deg + in_deg) / denom if n > 1 else np.zeros(n)
    in_c = in_deg / denom if n > 1 else np.zeros(n)
    out_c = out_deg / denom if n > 1 else np.zeros(n)

    indptr, indices = _csr_arrays(a)
    bc, reach, dsum = _kernels.brandes_bfs(indptr, indices, n)
    bc = np.asarray(bc) / ((n - 1) * (n - 2)) if n > 2 else np.zeros(n)
    reach = np.asarray(reach, dtype=np.float64)
    dsum = np.asarray(dsum, dtype=np.float64)
    closeness = np.divide(reach, dsum, out=np.zeros(n), where=dsum > 0)

    sym = ((a + a.T) > 0).astype(np.float64).tocsr()
    k = np.asarray(sym.sum(axis=1)).ravel()
    tri = np.asarray((sym @ sym).multiply(sym).sum(axis=1)).ravel() / 2.0
    possible = k * (k - 1) / 2.0
    clustering = np.divide(tri, possible, out=np.zeros(n), where=possible > 0)

    katz, _ = katz_centrality(a, tol=tol, max_iter=max_iter)
    eig = eigenvector_centrality(sym, tol=tol, max_iter=max_iter)

    cols = np.stack([katz, bc, deg_c, closeness, clustering, eig, in_c, out_c], axis=1)
    return {node: cols[i].tolist() for i, node in enumerate(g.nodes)}


# ---------------------------------------------------------------- assembly

def expert_feature_matrix(ledgers: Mapping[str, AccountLedger], g: TransactionGraph,
                          addresses: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Raw (un-normalised) 26-column feature rows, one per address."""
    addresses = list(addresses) if addresses is not None else list(g.nodes)
    cent = compute_centralities(g)
    empty = AccountLedger("")
    rows = []
    for a in addresses:
        led = ledgers.get(a, empty)
        rows.append(compute_statistical(led) + compute_temporal(led)
                    + cent.get(a, [0.0] * len(CENTRALITY)))
    return addresses, np.asarray(rows, dtype=np.float64).reshape(len(addresses), N_FEATURES)


def signed_log(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(np.abs(x))


def normalize_features(matrix: np.ndarray, train_rows: Sequence[int] | np.ndarray | None = None,
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Signed log1p, then z-score with statistics from ``train_rows`` only.

    Columns that are constant over the training rows map to zero everywhere.
    Returns ``(normalised, mean, std)``.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape[0] < 2:
        raise ValueError("need at least two rows to normalise")
    t = signed_log(m)
    ref = t if train_rows is None else t[np.asarray(train_rows, dtype=np.int64)]
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    safe = np.where(const, 1.0, sd)
    out = (t - mu) / safe
    out[:, const] = 0.0
    return out, mu, sd


def features_to_csv(addresses: Sequence[str], matrix: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("address",) + FEATURE_NAMES)
    for a, row in zip(addresses, matrix):
        w.writerow([a] + [repr(float(v)) for v in row])
    return buf.getvalue()


def features_from_csv(text: str) -> tuple[list[str], np.ndarray]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header[1:]) != FEATURE_NAMES:
        raise ValueError("feature file header does not match the 26 expected columns")
    addrs, rows = [], []
    for r in reader:
        addrs.append(r[0])
        rows.append([float(v) for v in r[1:]])
    return addrs, np.asarray(rows, dtype=np.float64).reshape(len(addrs), N_FEATURES)
