"""Contextual feature fusion: text queries cross-attend into image tokens.

A residual multi-head cross-attention layer takes the text sequence as
query and the image class token (optionally all image tokens) as key and
value, followed by self-attention transformer blocks over the fused
sequence. The EOS-position token of the result is the retrieval feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import ImageTokens, TextTokens
from .errors import ContractError
from .nn import Module, Tensor, TransformerBlock, select_positions

FUSION_MODES = ("cls_only", "all_tokens")


@dataclass
class FusedFeature:
    h_seq: Tensor     # [B, L, d], L = query length
    h_global: Tensor  # [B, d], the EOS-position (or class-position) token


class ContextualFeatureFusion(Module):
    def __init__(self, dim: int, heads: int, blocks: int, mode: str,
                 rng: np.random.Generator):
        if mode not in FUSION_MODES:
            raise ContractError(f"fusion mode must be one of {FUSION_MODES}, got '{mode}'")
        self.mode = mode
        self.cross = TransformerBlock(dim, heads, rng)
        self.blocks = [TransformerBlock(dim, heads, rng) for _ in range(blocks)]

    def _image_kv(self, img: ImageTokens) -> Tensor:
        if self.mode == "cls_only":
            batch, dim = img.cls.shape
            return img.cls.reshape(batch, 1, dim)
        return img.sequence()

    def fuse(self, text: TextTokens, img: ImageTokens,
             collect_weights: bool = False) -> FusedFeature:
        """Fuse with the text sequence as query; padding stays masked throughout."""
        x = self.cross(text.sequence, kv=self._image_kv(img), collect_weights=collect_weights)
        for block in self.blocks:
            x = block(x, key_mask=text.mask, collect_weights=collect_weights)
        return FusedFeature(h_seq=x, h_global=select_positions(x, text.eos_index))

    def fuse_image_query(self, img: ImageTokens, collect_weights: bool = False) -> FusedFeature:
        """Ablation arm: the image token sequence itself serves as the query."""
        x = self.cross(img.sequence(), kv=self._image_kv(img), collect_weights=collect_weights)
        for block in self.blocks:
            x = block(x, collect_weights=collect_weights)
        return FusedFeature(h_seq=x, h_global=x[:, 0])

    def attention_weights(self) -> list[np.ndarray]:
        """Raw attention weights captured by the most recent collected forward."""
        weights = []
        if self.cross.attn.last_weights is not None:
            weights.append(self.cross.attn.last_weights)
        for block in self.blocks:
            if block.attn.last_weights is not None:
                weights.append(block.attn.last_weights)
        return weights
