from .tensor import (
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    l2_normalize,
    log_softmax,
    select_positions,
    set_default_dtype,
    softmax,
    take_rows,
    using_dtype,
    zeros,
)
from .layers import (
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    TransformerBlock,
    expand_rows,
    prepend_token,
    scaled_dot_attention,
    truncated_normal,
)
from .optim import Adam, AdamState, adam_step
from .checkpoint import file_sha256, load_container, save_container, strip_parameters

__all__ = [
    "Adam",
    "AdamState",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "Tensor",
    "TransformerBlock",
    "adam_step",
    "as_tensor",
    "concat",
    "default_dtype",
    "expand_rows",
    "file_sha256",
    "l2_normalize",
    "load_container",
    "log_softmax",
    "prepend_token",
    "save_container",
    "scaled_dot_attention",
    "select_positions",
    "set_default_dtype",
    "softmax",
    "strip_parameters",
    "take_rows",
    "truncated_normal",
    "using_dtype",
    "zeros",
]
