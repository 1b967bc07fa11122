"""Pure-Python versions of the compiled graph kernels (same signatures and results)."""
from __future__ import annotations

from collections import deque

import numpy as np


def brandes_bfs(indptr: np.ndarray, indices: np.ndarray, n: int):
    """Unnormalised betweenness plus per-source reach count and distance sum.

    Unweighted directed graph in CSR form (out-neighbours of ``v`` are
    ``indices[indptr[v]:indptr[v+1]]``).
    """
    indptr = indptr.tolist()
    indices = indices.tolist()
    bc = [0.0] * n
    reach = np.zeros(n, dtype=np.int64)
    dsum = np.zeros(n, dtype=np.int64)
    for s in range(n):
        sigma = [0.0] * n
        dist = [-1] * n
        preds: list[list[int]] = [[] for _ in range(n)]
        sigma[s] = 1.0
        dist[s] = 0
        order = []
        q = deque([s])
        while q:
            v = q.popleft()
            order.append(v)
            dv = dist[v]
            for w in indices[indptr[v]:indptr[v + 1]]:
                if dist[w] < 0:
                    dist[w] = dv + 1
                    q.append(w)
                if dist[w] == dv + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        reach[s] = len(order) - 1
        dsum[s] = sum(dist[v] for v in order)
        delta = [0.0] * n
        for w in reversed(order):
            coeff = (1.0 + delta[w]) / sigma[w]
            for v in preds[w]:
                delta[v] += sigma[v] * coeff
            if w != s:
                bc[w] += delta[w]
    return np.asarray(bc, dtype=np.float64), reach, dsum


def two_hop(indptr: np.ndarray, indices: np.ndarray, degree: np.ndarray, anchor: int,
            max_nodes: int):
    """Anchor, then hop-1, then hop-2 nodes of an undirected CSR graph.

    Within a hop nodes are admitted by descending degree, then ascending id,
    until ``max_nodes`` is reached.  Returns (nodes, hops) arrays.
    """
    nodes = [anchor]
    hops = [0]
    seen = {anchor}
    frontier = [anchor]
    for hop in (1, 2):
        if len(nodes) >= max_nodes:
            break
        cand = set()
        for u in frontier:
            for w in indices[indptr[u]:indptr[u + 1]].tolist():
                if w not in seen:
                    cand.add(w)
        ranked = sorted(cand, key=lambda w: (-int(degree[w]), w))
        room = max_nodes - len(nodes)
        admitted = ranked[:room]
        nodes.extend(admitted)
        hops.extend([hop] * len(admitted))
        seen.update(admitted)
        frontier = admitted
    return np.asarray(nodes, dtype=np.int64), np.asarray(hops, dtype=np.int64)
