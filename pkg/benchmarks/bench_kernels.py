"""Compare the compiled graph kernels with the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--nodes 400] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ethtlm._kernels import _fallback

try:
    from ethtlm._kernels import _core
except ImportError:
    _core = None


def random_csr(n: int, avg_deg: float, seed: int, undirected: bool = False):
    rng = np.random.default_rng(seed)
    m = int(n * avg_deg)
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    if undirected:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    pairs = np.unique(np.stack([src, dst], 1), axis=0)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, pairs[:, 0] + 1, 1)
    return np.cumsum(indptr), np.ascontiguousarray(pairs[:, 1], dtype=np.int64)


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=400)
    ap.add_argument("--kg-nodes", type=int, default=5000)
    ap.add_argument("--anchors", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    impls = [("python", _fallback)] + ([("cython", _core)] if _core is not None else [])

    indptr, indices = random_csr(args.nodes, 4.0, 0)
    kp, ki = random_csr(args.kg_nodes, 3.0, 1, undirected=True)
    degree = np.diff(kp)
    anchors = np.random.default_rng(2).integers(0, args.kg_nodes, args.anchors)

    rows = []
    for name, mod in impls:
        t_b = best_of(lambda: mod.brandes_bfs(indptr, indices, args.nodes), args.repeat)
        t_h = best_of(lambda: [mod.two_hop(kp, ki, degree, int(a), 100) for a in anchors], args.repeat)
        rows.append((name, t_b, t_h))

    ref = _fallback.brandes_bfs(indptr, indices, args.nodes)
    if _core is not None:
        got = _core.brandes_bfs(indptr, indices, args.nodes)
        assert all(np.allclose(a, b, rtol=1e-12, atol=0) for a, b in zip(ref, got))

    print(f"{'backend':<8} {'brandes (s)':>12} {'two_hop x' + str(args.anchors) + ' (s)':>18}")
    for name, t_b, t_h in rows:
        print(f"{name:<8} {t_b:12.4f} {t_h:18.4f}")
    if len(rows) == 2:
        print(f"speedup  {rows[0][1] / rows[1][1]:12.1f}x {rows[0][2] / rows[1][2]:17.1f}x")
    else:
        print("compiled core not built; only the fallback was timed")


if __name__ == "__main__":
    main()
