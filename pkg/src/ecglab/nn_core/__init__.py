"""Training substrate: autodiff tensors, layers, optimizer, checkpoints."""

from .tensor import Tensor, cat, conv1d, count_flops, cross_entropy, no_grad
from .layers import (
    BatchNorm1d,
    Conv1d,
    GRU,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Sequential,
    global_avg_pool,
)
from .optim import Adam, PlateauScheduler, l2_penalty
from .checkpoint import (
    load_checkpoint,
    load_module_state,
    module_state,
    save_checkpoint,
)

__all__ = [
    "Adam",
    "BatchNorm1d",
    "Conv1d",
    "GRU",
    "Linear",
    "Module",
    "MultiHeadSelfAttention",
    "PlateauScheduler",
    "Sequential",
    "Tensor",
    "cat",
    "conv1d",
    "count_flops",
    "cross_entropy",
    "global_avg_pool",
    "l2_penalty",
    "load_checkpoint",
    "load_module_state",
    "module_state",
    "no_grad",
    "save_checkpoint",
]
