"""Caption-guided inversion: map an image into a pseudo-word embedding.

Image tokens are first reweighted elementwise by the caption's global
feature, directing the inversion toward caption-relevant content. A
three-layer MLP inverts the modulated class token into a global pseudo-word
component; learnable prompt queries cross-attend into the modulated local
tokens and another MLP inverts their average into a local component. Their
sum is spliced into the prompt "a photo of a <pseudo> person" and re-encoded
by the text encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import ImageTokens, TextEncoder, TextTokens, global_text_feature
from .errors import ContractError, ShapeError
from .nn import Linear, Module, Tensor, TransformerBlock, expand_rows, l2_normalize


@dataclass
class ModulatedTokens:
    cls_mod: Tensor     # [B, d]
    locals_mod: Tensor  # [B, M, d]


@dataclass
class PseudoWordState:
    s_global: Tensor            # [B, d_w]
    s_local: Tensor             # [B, d_w]
    s_star: Tensor              # [B, d_w]
    prompt_tokens: TextTokens   # encoding of the pseudo-word prompt


def modulate(img: ImageTokens, caption_global: Tensor) -> ModulatedTokens:
    """Elementwise product of every image token with the caption feature."""
    if img.cls.shape[-1] != caption_global.shape[-1]:
        raise ShapeError(
            f"caption feature dim {caption_global.shape[-1]} != token dim {img.cls.shape[-1]}"
        )
    batch, dim = caption_global.shape
    return ModulatedTokens(
        cls_mod=img.cls * caption_global,
        locals_mod=img.locals * caption_global.reshape(batch, 1, dim),
    )


class InversionMlp(Module):
    """Three stacked linear layers (d -> d -> d -> d_w) with GELUs between.

    The output is rescaled to the nominal word-embedding norm (0.02 *
    sqrt(d_w)): an inversion must land inside the word-embedding space, and
    an unconstrained MLP output runs orders of magnitude hotter than any
    real token, letting training tunnel identity information through the
    prompt and breaking branch removal at inference.
    """

    def __init__(self, dim: int, out_dim: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, dim, rng)
        self.fc2 = Linear(dim, dim, rng)
        self.fc3 = Linear(dim, out_dim, rng)
        self.scale = 0.02 * np.sqrt(out_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return l2_normalize(self.fc3(self.fc2(self.fc1(x).gelu()).gelu())) * self.scale


class CaptionGuidedInversion(Module):
    def __init__(self, dim: int, word_dim: int, num_queries: int, depth: int,
                 heads: int, rng: np.random.Generator):
        if depth < 1:
            raise ContractError(f"inversion depth must be at least 1, got {depth}")
        if num_queries < 1:
            raise ContractError(f"need at least one prompt query, got {num_queries}")
        self.queries = Tensor(rng.normal(0.0, 0.02, size=(num_queries, dim)), requires_grad=True)
        self.blocks = [TransformerBlock(dim, heads, rng) for _ in range(depth)]
        self.f_global = InversionMlp(dim, word_dim, rng)
        self.f_local = InversionMlp(dim, word_dim, rng)

    def invert_global(self, cls_mod: Tensor) -> Tensor:
        return self.f_global(cls_mod)

    def invert_local(self, locals_mod: Tensor) -> Tensor:
        batch = locals_mod.shape[0]
        x = expand_rows(self.queries, batch)
        for block in self.blocks:
            x = block(x, kv=locals_mod)
        return self.f_local(x.mean(axis=1))

    def pseudo_word(self, img: ImageTokens, caption: TextTokens) -> tuple[Tensor, Tensor, Tensor]:
        modulated = modulate(img, global_text_feature(caption))
        s_global = self.invert_global(modulated.cls_mod)
        s_local = self.invert_local(modulated.locals_mod)
        return s_global, s_local, s_global + s_local


def assemble_prompt(s_star: Tensor, text_encoder: TextEncoder,
                    prompt_ids: np.ndarray) -> TextTokens:
    """Encode the pseudo-word prompt with ``s_star`` spliced into its slot."""
    batch = s_star.shape[0]
    ids = np.broadcast_to(prompt_ids, (batch, prompt_ids.shape[-1]))
    return text_encoder(ids, pseudo_embedding=s_star)


def inversion_forward(cgi: CaptionGuidedInversion, img: ImageTokens, caption: TextTokens,
                      text_encoder: TextEncoder, prompt_ids: np.ndarray) -> PseudoWordState:
    """Full pipeline: modulate, invert globally and locally, re-encode the prompt."""
    s_global, s_local, s_star = cgi.pseudo_word(img, caption)
    prompt_tokens = assemble_prompt(s_star, text_encoder, prompt_ids)
    return PseudoWordState(s_global=s_global, s_local=s_local, s_star=s_star,
                           prompt_tokens=prompt_tokens)
