"""Minimal double-precision autodiff used by every learnable component."""
from .gradcheck import grad_check
from .params import Adam, ParameterRegistry, load_checkpoint, save_checkpoint, truncated_normal
from .tensor import (
    MASK_VALUE,
    NotScalar,
    ShapeMismatch,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    cos,
    div,
    embedding_lookup,
    exp,
    gelu,
    getitem,
    l2norm,
    layernorm,
    log,
    log_softmax,
    logsigmoid,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    scaled_dot_attention,
    segment_softmax,
    segment_sum,
    sigmoid,
    sin,
    softmax,
    sqrt,
    sub,
    take_rows,
    transpose,
    tsum,
    where,
)

__all__ = [name for name in dir() if not name.startswith("_")]
