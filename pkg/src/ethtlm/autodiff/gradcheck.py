from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .params import ParameterRegistry
from .tensor import Tensor, backward, no_grad


def grad_check(f: Callable[[], Tensor], registry: ParameterRegistry, eps: float = 1e-5,
               max_coords: int = 200, seed: int = 0,
               names: Iterable[str] | None = None, floor: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    The error is |a - n| / max(|a| + |n|, floor * max(1, |f|)).  The floor
    keeps structurally zero gradients (e.g. an attention key bias, which
    softmax cancels) from turning finite-difference roundoff, which grows
    with |f|, into an O(1) error.

    Coordinates are drawn round-robin over the parameter tensors (random
    position inside each) so every tensor is probed even when one large
    embedding table dominates the coordinate count.
    """
    names = list(names) if names is not None else registry.names()
    registry.zero_grad()
    loss = f()
    scale = floor * max(1.0, abs(loss.item()))
    backward(loss)
    analytic = {n: (registry[n].grad if registry[n].grad is not None else np.zeros(registry[n].shape))
                for n in names}

    rng = np.random.default_rng(seed)
    pools = {n: rng.permutation(registry[n].size) for n in names}
    coords: list[tuple[str, int]] = []
    depth = 0
    while len(coords) < max_coords:
        added = False
        for n in names:
            if depth < len(pools[n]) and len(coords) < max_coords:
                coords.append((n, int(pools[n][depth])))
                added = True
        if not added:
            break
        depth += 1

    worst = 0.0
    with no_grad():
        for n, i in coords:
            flat = registry[n].data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            ana = float(analytic[n].reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana) + abs(num), scale)
            worst = max(worst, err)
    registry.zero_grad()
    return worst
