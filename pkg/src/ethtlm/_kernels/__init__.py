"""Graph kernels: compiled Cython core when built, pure Python otherwise.

Set ``ETHTLM_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("ETHTLM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

brandes_bfs = _impl.brandes_bfs
two_hop = _impl.two_hop

__all__ = ["BACKEND", "brandes_bfs", "two_hop"]
