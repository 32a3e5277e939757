from .optim import AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv1d,
    cross_entropy,
    embedding,
    gelu,
    getitem,
    is_grad_enabled,
    layernorm,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    scale,
    softmax,
    transpose,
    tsum,
    where,
)

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "conv1d",
    "cross_entropy",
    "embedding",
    "gelu",
    "getitem",
    "is_grad_enabled",
    "layernorm",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "reshape",
    "scale",
    "softmax",
    "transpose",
    "tsum",
    "where",
]
