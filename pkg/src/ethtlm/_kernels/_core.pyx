# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled graph kernels; see _fallback.py for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def brandes_bfs(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bc_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] reach_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] dsum_arr = np.zeros(n, dtype=np.int64)
    cdef double[::1] bc = bc_arr
    cdef cnp.int64_t[::1] reach = reach_arr
    cdef cnp.int64_t[::1] dsum = dsum_arr
    cdef double[::1] sigma = np.zeros(n, dtype=np.float64)
    cdef double[::1] delta = np.zeros(n, dtype=np.float64)
    cdef cnp.int64_t[::1] dist = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] order = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t s, head, tail, i, k, v, w
    cdef cnp.int64_t dv, total
    for s in range(n):
        sigma[s] = 1.0
        dist[s] = 0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            dv = dist[v]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dv + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dv + 1:
                    sigma[w] += sigma[v]
        reach[s] = tail - 1
        total = 0
        for i in range(tail):
            total += dist[order[i]]
        dsum[s] = total
        # successor-form dependency accumulation, newest BFS layer first
        for i in range(tail - 1, -1, -1):
            v = order[i]
            dv = dist[v]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] == dv + 1:
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if v != s:
                bc[v] += delta[v]
        for i in range(tail):
            v = order[i]
            sigma[v] = 0.0
            delta[v] = 0.0
            dist[v] = -1
    return bc_arr, reach_arr, dsum_arr


def two_hop(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices, cnp.int64_t[::1] degree,
            Py_ssize_t anchor, Py_ssize_t max_nodes):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.int8_t[::1] mark = np.zeros(n, dtype=np.int8)
    cdef list nodes = [anchor]
    cdef list hops = [0]
    cdef list frontier = [anchor]
    cdef list cand, keyed
    cdef Py_ssize_t u, k, w, hop, room
    mark[anchor] = 1
    for hop in range(1, 3):
        if len(nodes) >= max_nodes:
            break
        cand = []
        for u in frontier:
            for k in range(indptr[u], indptr[u + 1]):
                w = indices[k]
                if mark[w] == 0:
                    mark[w] = 2
                    cand.append(w)
        keyed = [(-degree[w], w) for w in cand]
        keyed.sort()
        cand = [kw[1] for kw in keyed]
        room = max_nodes - len(nodes)
        for w in cand[room:]:
            mark[w] = 0
        cand = cand[:room]
        for w in cand:
            mark[w] = 1
        nodes.extend(cand)
        hops.extend([hop] * len(cand))
        frontier = cand
    return np.asarray(nodes, dtype=np.int64), np.asarray(hops, dtype=np.int64)
