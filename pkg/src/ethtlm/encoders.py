"""Transformer sequence encoder and relation-aware graph attention encoder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterRegistry, Tensor
from .errors import InvalidConfig, SequenceTooLong

SELF_RELATION = 2  # index of the learned self-loop relation embedding


@dataclass(frozen=True)
class SeqEncoderConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ff_dim: int = 256
    max_len: int = 512

    def __post_init__(self):
        if self.dim % self.heads:
            raise InvalidConfig(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.layers < 0 or self.max_len < 1 or self.vocab_size < 5:
            raise InvalidConfig("bad sequence encoder sizes")


@dataclass(frozen=True)
class GnnConfig:
    dim: int = 64
    layers: int = 2
    in_dim: int = 26
    relations: int = 2
    rel_dim: int = 16

    def __post_init__(self):
        if self.layers < 0 or self.dim < 1 or self.relations < 1:
            raise InvalidConfig("bad graph encoder sizes")


# ---------------------------------------------------------------- helpers

def add_linear(reg: ParameterRegistry, name: str, n_in: int, n_out: int) -> None:
    reg.add(f"{name}.w", (n_in, n_out))
    reg.add(f"{name}.b", (n_out,), init="zeros")


def linear(x, reg: ParameterRegistry, name: str) -> Tensor:
    return ad.matmul(x, reg[f"{name}.w"]) + reg[f"{name}.b"]


def add_norm(reg: ParameterRegistry, name: str, dim: int) -> None:
    reg.add(f"{name}.g", (dim,), init="ones")
    reg.add(f"{name}.b", (dim,), init="zeros")


def norm(x, reg: ParameterRegistry, name: str) -> Tensor:
    return ad.layernorm(x) * reg[f"{name}.g"] + reg[f"{name}.b"]


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, T, d) -> (B, H, T, d/H)"""
    b, t, d = x.shape
    return ad.transpose(ad.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


# ---------------------------------------------------------------- sequence

def init_sequence_params(reg: ParameterRegistry, cfg: SeqEncoderConfig, prefix: str = "seq") -> None:
    d = cfg.dim
    reg.add(f"{prefix}.tok", (cfg.vocab_size, d))
    reg.add(f"{prefix}.pos", (cfg.max_len, d))
    for i in range(cfg.layers):
        p = f"{prefix}.l{i}"
        add_norm(reg, f"{p}.ln1", d)
        for m in ("q", "k", "v", "o"):
            add_linear(reg, f"{p}.{m}", d, d)
        add_norm(reg, f"{p}.ln2", d)
        add_linear(reg, f"{p}.ff1", d, cfg.ff_dim)
        add_linear(reg, f"{p}.ff2", cfg.ff_dim, d)
    if cfg.layers:
        add_norm(reg, f"{prefix}.lnf", d)


def encode_sequence(ids, reg: ParameterRegistry, cfg: SeqEncoderConfig, pad_mask=None,
                    prefix: str = "seq") -> Tensor:
    """Hidden states for a batch of id rows.

    ``ids`` is (B, T) or (T,); ``pad_mask`` marks real tokens with True.
    Position 0 of every row is [CLS].  Returns (B, T, d) (or (T, d)).
    """
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    b, t = ids.shape
    if t > cfg.max_len:
        raise SequenceTooLong(f"sequence of {t} tokens exceeds max_len {cfg.max_len}")
    x = ad.embedding_lookup(reg[f"{prefix}.tok"], ids) + ad.getitem(reg[f"{prefix}.pos"], slice(0, t))
    mask = None
    if pad_mask is not None:
        keep = np.asarray(pad_mask, dtype=bool).reshape(b, t)
        mask = np.where(keep, 0.0, ad.MASK_VALUE)[:, None, None, :]
    for i in range(cfg.layers):
        p = f"{prefix}.l{i}"
        y = norm(x, reg, f"{p}.ln1")
        q = split_heads(linear(y, reg, f"{p}.q"), cfg.heads)
        k = split_heads(linear(y, reg, f"{p}.k"), cfg.heads)
        v = split_heads(linear(y, reg, f"{p}.v"), cfg.heads)
        att, _ = ad.scaled_dot_attention(q, k, v, mask)
        x = x + linear(merge_heads(att), reg, f"{p}.o")
        y = norm(x, reg, f"{p}.ln2")
        x = x + linear(ad.gelu(linear(y, reg, f"{p}.ff1")), reg, f"{p}.ff2")
    if cfg.layers:
        x = norm(x, reg, f"{prefix}.lnf")
    return ad.getitem(x, 0) if single else x


# ---------------------------------------------------------------- graph

def init_graph_params(reg: ParameterRegistry, cfg: GnnConfig, prefix: str = "gnn") -> None:
    d = cfg.dim
    add_linear(reg, f"{prefix}.inp", cfg.in_dim, d)
    reg.add(f"{prefix}.rel", (cfg.relations + 1, cfg.rel_dim))
    for i in range(cfg.layers):
        p = f"{prefix}.l{i}"
        add_linear(reg, f"{p}.m", d + cfg.rel_dim, d)
        add_linear(reg, f"{p}.q", d, d)
        add_linear(reg, f"{p}.k", d + cfg.rel_dim, d)
        add_linear(reg, f"{p}.v", d, d)


@dataclass
class EdgeIndex:
    """Message edges src -> dst with relation ids, self-loops appended."""
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    n: int

    @classmethod
    def from_triples(cls, triples, n: int) -> "EdgeIndex":
        arr = np.asarray(list(triples), dtype=np.int64).reshape(-1, 3)
        loops = np.arange(n, dtype=np.int64)
        src = np.concatenate([arr[:, 0], loops])
        dst = np.concatenate([arr[:, 2], loops])
        rel = np.concatenate([arr[:, 1], np.full(n, SELF_RELATION, dtype=np.int64)])
        return cls(src, dst, rel, n)


def gnn_layer(states: Tensor, edges: EdgeIndex, reg: ParameterRegistry, name: str,
              return_attention: bool = False):
    """One relation-aware attention step over in-edges plus a self-loop per node.

    m_si = W_m [v_s | r_si],  q_s = W_q v_s,  k_i = W_k [v_i | r_si],
    alpha = softmax over s in N(i) + {i} of q_s . k_i / sqrt(d),
    v_i' = v_i + f_v(sum_s alpha_si m_si),  f_v = gelu(W_v .).
    """
    rel_name = name.rsplit(".", 1)[0] + ".rel"
    d = states.shape[-1]
    r = ad.embedding_lookup(reg[rel_name], edges.rel)
    vs = ad.embedding_lookup(states, edges.src)
    vi = ad.embedding_lookup(states, edges.dst)
    m = linear(ad.concat([vs, r], axis=-1), reg, f"{name}.m")
    q = linear(vs, reg, f"{name}.q")
    k = linear(ad.concat([vi, r], axis=-1), reg, f"{name}.k")
    score = ad.tsum(q * k, axis=-1) * (1.0 / math.sqrt(d))
    alpha = ad.segment_softmax(score, edges.dst, edges.n)
    agg = ad.segment_sum(m * ad.reshape(alpha, (-1, 1)), edges.dst, edges.n)
    out = states + ad.gelu(linear(agg, reg, f"{name}.v"))
    return (out, alpha) if return_attention else out


def encode_graph(node_features, triples, reg: ParameterRegistry, cfg: GnnConfig,
                 prefix: str = "gnn") -> Tensor:
    """Entity embeddings (nodes x d) for a subgraph given in local ids.

    ``triples`` use row indices of ``node_features``; a batch of subgraphs is
    encoded as one disjoint union with offset ids.
    """
    x = ad.as_tensor(node_features)
    n = x.shape[0]
    edges = EdgeIndex.from_triples(triples, n)
    v = linear(x, reg, f"{prefix}.inp")
    for i in range(cfg.layers):
        v = gnn_layer(v, edges, reg, f"{prefix}.l{i}")
    return v
