"""Restricted cross-attention between token states and KG entity states.

Only the [CLS] row of the sequence may attend to entities, and entities may
only attend to the [CLS] column, so every other token state passes through
untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import MASK_VALUE, ParameterRegistry, Tensor
from .encoders import add_linear, linear, merge_heads, split_heads
from .errors import DictMissing


@dataclass
class AlignmentDictionary:
    """account -> (anchor entity id, subgraph node ids with the anchor first)."""
    entries: dict[str, tuple[int, np.ndarray]] = field(default_factory=dict)

    def add(self, account: str, anchor: int, nodes: Sequence[int]) -> None:
        nodes = np.asarray(nodes, dtype=np.int64)
        if len(nodes) == 0 or int(nodes[0]) != int(anchor):
            raise ValueError("subgraph node list must start with the anchor")
        self.entries[account] = (int(anchor), nodes)

    def lookup(self, account: str) -> tuple[int, np.ndarray]:
        try:
            return self.entries[account]
        except KeyError:
            raise DictMissing(account) from None

    def __contains__(self, account) -> bool:
        return account in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def visibility_matrix(seq_len: int, n_nodes: int, node_valid=None) -> np.ndarray:
    """Additive mask (seq_len x n_nodes): row 0 open on valid nodes, all else -1e9."""
    m = np.full((seq_len, n_nodes), MASK_VALUE)
    m[0, :] = 0.0
    if node_valid is not None:
        m[0, ~np.asarray(node_valid, dtype=bool)] = MASK_VALUE
    return m


def init_synergy_params(reg: ParameterRegistry, dim: int, prefix: str = "mias") -> None:
    for m in ("hq", "hk", "hv", "ho", "vq", "vk", "vv", "vo"):
        add_linear(reg, f"{prefix}.{m}", dim, dim)


def init_linear_fusion_params(reg: ParameterRegistry, dim: int, prefix: str = "fuse") -> None:
    reg.add(f"{prefix}.w", (dim, dim))


def cross_attend(h: Tensor, v: Tensor, reg: ParameterRegistry, heads: int, node_valid=None,
                 prefix: str = "mias", return_weights: bool = False):
    """Batched MiAS.  ``h`` is (B, T, d), ``v`` is (B, N, d) padded entity states.

    ``node_valid`` (B, N) marks real subgraph nodes.  Under the visibility
    matrix every row except [CLS] is fully blocked and contributes nothing, so
    only the [CLS] query is evaluated and the other rows are copied through.
    Likewise each entity sees a single key ([CLS]).  With ``return_weights``
    the full (B, H, T, N) and (B, H, N, T) weight arrays are also returned.
    """
    h, v = ad.as_tensor(h), ad.as_tensor(v)
    b, t, _ = h.shape
    n = v.shape[1]
    valid = np.ones((b, n), dtype=bool) if node_valid is None else np.asarray(node_valid, dtype=bool)
    cls = ad.getitem(h, (slice(None), slice(0, 1)))

    # sequence -> entities: the [CLS] row of the visibility matrix
    m_hv = np.where(valid, 0.0, MASK_VALUE)[:, None, None, :]
    q = split_heads(linear(cls, reg, f"{prefix}.hq"), heads)
    k = split_heads(linear(v, reg, f"{prefix}.hk"), heads)
    val = split_heads(linear(v, reg, f"{prefix}.hv"), heads)
    att, w_hv = ad.scaled_dot_attention(q, k, val, m_hv, zero_blocked_rows=True)
    upd = linear(merge_heads(att), reg, f"{prefix}.ho")
    has_nodes = valid.any(axis=1)[:, None, None]
    cls_hat = ad.where(has_nodes, cls + upd, cls)
    h_hat = ad.concat([cls_hat, ad.getitem(h, (slice(None), slice(1, None)))], axis=1)

    # entities -> sequence: the only visible key is [CLS]
    q2 = split_heads(linear(v, reg, f"{prefix}.vq"), heads)
    k2 = split_heads(linear(cls, reg, f"{prefix}.vk"), heads)
    val2 = split_heads(linear(cls, reg, f"{prefix}.vv"), heads)
    att2, w_vh = ad.scaled_dot_attention(q2, k2, val2)
    upd2 = linear(merge_heads(att2), reg, f"{prefix}.vo")
    v_hat = ad.where(valid[:, :, None], v + upd2, v)
    if not return_weights:
        return h_hat, v_hat
    full_hv = np.zeros((b, heads, t, n))
    full_hv[:, :, 0:1, :] = w_hv.data
    full_vh = np.zeros((b, heads, n, t))
    full_vh[:, :, :, 0:1] = w_vh.data * valid[:, None, :, None]
    return h_hat, v_hat, full_hv, full_vh


def linear_fusion(h: Tensor, v: Tensor, reg: ParameterRegistry, node_valid=None,
                  prefix: str = "fuse"):
    """Ablation stand-in: h unchanged, anchor (node 0) gets h_CLS W added."""
    h, v = ad.as_tensor(h), ad.as_tensor(v)
    b, n, d = v.shape
    cls = ad.getitem(h, (slice(None), slice(0, 1), slice(None)))  # (B, 1, d)
    add = ad.matmul(cls, reg[f"{prefix}.w"])
    is_anchor = np.zeros((b, n, 1), dtype=bool)
    is_anchor[:, 0, 0] = True if node_valid is None else np.asarray(node_valid, dtype=bool)[:, 0]
    return h, ad.where(is_anchor, v + add, v)


def fuse_for_pretraining(h: Tensor, v: Tensor, reg: ParameterRegistry, heads: int,
                         node_valid=None, mode: str = "mias"):
    """(states for the masked-token head, entity states for link prediction)."""
    if mode == "mias":
        return cross_attend(h, v, reg, heads, node_valid)
    if mode == "linear":
        return linear_fusion(h, v, reg, node_valid)
    if mode == "none":
        return ad.as_tensor(h), ad.as_tensor(v)
    raise ValueError(f"unknown fusion mode {mode!r}")


def gather_entity_states(states: Tensor, groups: Sequence[Sequence[int]]) -> tuple[Tensor, np.ndarray]:
    """Pad per-account row groups of ``states`` into (B, N, d) plus a validity mask."""
    b = len(groups)
    n = max((len(g) for g in groups), default=1) or 1
    idx = np.zeros((b, n), dtype=np.int64)
    valid = np.zeros((b, n), dtype=bool)
    for i, g in enumerate(groups):
        idx[i, :len(g)] = g
        valid[i, :len(g)] = True
    return ad.embedding_lookup(states, idx), valid
