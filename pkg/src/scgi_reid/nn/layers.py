"""Neural building blocks: linear layers, layer norm, attention, transformer blocks.

All modules draw their parameters from an explicit ``numpy.random.Generator``
so that identical seeds give bit-identical initialization.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError, ShapeError
from .tensor import Tensor, concat, default_dtype, softmax, zeros

MASKED_LOGIT_BIAS = -1e9


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with draws beyond two standard deviations resampled."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(default_dtype())


class Module:
    """Base class providing named parameter traversal and state IO."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise ContractError(f"checkpoint is missing parameter '{name}'")
            arr = np.asarray(arrays[name])
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter '{name}' has shape {arr.shape}, expected {p.data.shape}")
            p.data = arr.astype(default_dtype())


class Linear(Module):
    """Affine map ``x @ weight.T + bias`` over the trailing dimension.

    Weights use truncated-normal init at fan-in scale (std = 1/sqrt(in_dim)),
    which preserves activation magnitude at the small widths used here; the
    flat 0.02 used by large pretrained encoders is its d~=2500 special case.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        std = 1.0 / math.sqrt(in_dim)
        self.weight = Tensor(truncated_normal(rng, (out_dim, in_dim), std=std), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight.mT
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.gain + self.bias


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask_bias: np.ndarray | None = None,
                         return_weights: bool = False):
    """``softmax(q kᵀ / sqrt(d)) v`` over the trailing two axes.

    ``mask_bias`` is broadcast onto the attention logits; use
    :data:`MASKED_LOGIT_BIAS` at positions that must receive zero weight.
    """
    d = q.shape[-1]
    if d <= 0 or k.shape[-2] < 1:
        raise ShapeError("attention requires d > 0 and at least one key")
    if k.shape[-1] != d or v.shape[-1] != k.shape[-1] or v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"attention shapes incompatible: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = (q @ k.mT) / math.sqrt(d)
    weights = softmax(scores, axis=-1, mask_bias=mask_bias)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


class MultiHeadAttention(Module):
    """Projected multi-head attention; query and key/value sources may differ."""

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        if dim % num_heads != 0:
            raise ShapeError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.w_q = Linear(dim, dim, rng)
        self.w_k = Linear(dim, dim, rng)
        self.w_v = Linear(dim, dim, rng)
        self.w_o = Linear(dim, dim, rng)
        self.last_weights: np.ndarray | None = None

    def _split_heads(self, x: Tensor) -> Tensor:
        *lead, length, dim = x.shape
        x = x.reshape(*lead, length, self.num_heads, self.head_dim)
        axes = list(range(x.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        return x.transpose(*axes)

    def _merge_heads(self, x: Tensor) -> Tensor:
        axes = list(range(x.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        x = x.transpose(*axes)
        *lead, length, heads, hd = x.shape
        return x.reshape(*lead, length, heads * hd)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor,
                 key_mask: np.ndarray | None = None, collect_weights: bool = False) -> Tensor:
        qh = self._split_heads(self.w_q(query))
        kh = self._split_heads(self.w_k(key))
        vh = self._split_heads(self.w_v(value))
        mask_bias = None
        if key_mask is not None:
            # key_mask: [..., n_k] boolean, True where the key is attendable.
            bias = np.where(key_mask, 0.0, MASKED_LOGIT_BIAS).astype(default_dtype())
            mask_bias = np.expand_dims(bias, axis=(-3, -2))
        out, weights = scaled_dot_attention(qh, kh, vh, mask_bias=mask_bias, return_weights=True)
        self.last_weights = weights.data.copy() if collect_weights else None
        return self.w_o(self._merge_heads(out))


class FeedForward(Module):
    """Two linear layers with a GELU in between; hidden width = expansion * dim."""

    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 4):
        self.fc1 = Linear(dim, expansion * dim, rng)
        self.fc2 = Linear(expansion * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).gelu())


class TransformerBlock(Module):
    """Pre-norm residual block: attention (self or cross) followed by an FFN.

    With ``kv`` given, the block cross-attends: the normalized input is the
    query and the normalized ``kv`` provides keys and values. Output shape
    always equals the query input shape.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        self.ln_attn = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads, rng)
        self.ln_ffn = LayerNorm(dim)
        self.ffn = FeedForward(dim, rng)

    def __call__(self, x: Tensor, kv: Tensor | None = None,
                 key_mask: np.ndarray | None = None, collect_weights: bool = False) -> Tensor:
        q = self.ln_attn(x)
        source = q if kv is None else self.ln_attn(kv)
        x = x + self.attn(q, source, source, key_mask=key_mask, collect_weights=collect_weights)
        return x + self.ffn(self.ln_ffn(x))


def expand_rows(x: Tensor, batch: int) -> Tensor:
    """Broadcast a [n, d] tensor to [batch, n, d] inside the graph."""
    return x + zeros((batch,) + tuple(x.shape))


def prepend_token(token: Tensor, sequence: Tensor) -> Tensor:
    """Prepend a learnable [d] token to every row of a [B, L, d] sequence."""
    batch = sequence.shape[0]
    lead = token.reshape(1, 1, -1) + zeros((batch, 1, token.shape[-1]))
    return concat([lead, sequence], axis=1)
