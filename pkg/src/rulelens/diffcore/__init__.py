"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run: every op appends a record to an implicit graph held by the
output tensor; backward() topologically sorts and accumulates gradients.
Only the layers the toolkit's small networks need are provided; no GPU, no
mixed precision, no general broadcasting beyond bias addition.
"""

from .tensor import (
    DiffcoreError,
    ShapeError,
    Tensor,
    add,
    affine,
    backward,
    clamp_min,
    concat,
    cross_entropy,
    div,
    exp,
    gru_cell,
    log,
    masked_softmax,
    matmul,
    matmul_t,
    mean_pool,
    mul,
    neg,
    relu,
    self_attention,
    sigmoid,
    softmax,
    st_select,
    stack1,
    sub,
    sum_to_scalar,
    sse,
    tanh,
    tsum,
)
from .nn import GRUCell, Linear, Module, SelfAttention
from .optim import Adam, OptimError
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "DiffcoreError",
    "GRUCell",
    "Linear",
    "Module",
    "OptimError",
    "SelfAttention",
    "ShapeError",
    "Tensor",
    "add",
    "affine",
    "backward",
    "clamp_min",
    "concat",
    "cross_entropy",
    "div",
    "exp",
    "gru_cell",
    "load_checkpoint",
    "log",
    "masked_softmax",
    "matmul",
    "matmul_t",
    "mean_pool",
    "mul",
    "neg",
    "relu",
    "save_checkpoint",
    "self_attention",
    "sigmoid",
    "softmax",
    "st_select",
    "stack1",
    "sub",
    "sum_to_scalar",
    "sse",
    "tanh",
    "tsum",
]
