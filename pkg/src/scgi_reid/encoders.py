"""Tiny image and text encoders producing token sequences in one joint space.

The image path is a from-scratch patch transformer: patch embedding, a
learnable class token, positional embeddings, pre-norm blocks, then a
per-token projection into the joint dimension. The text path is a word
transformer with full (non-causal) attention and a padding mask; a reserved
pseudo-word slot lets callers splice an arbitrary embedding into the input
sequence with gradient flowing through it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .captions import PLAIN_PROMPT, PSEUDO_PROMPT_PREFIX, PSEUDO_PROMPT_SUFFIX, caption_vocabulary_words
from .errors import ContractError, ShapeError, ValidationError
from .nn import (
    Linear,
    Module,
    Tensor,
    TransformerBlock,
    concat,
    default_dtype,
    prepend_token,
    select_positions,
    take_rows,
    truncated_normal,
)

PAD, SOS, EOS, UNK, PSEUDO = "[PAD]", "[SOS]", "[EOS]", "[UNK]", "[PSEUDO]"
SPECIAL_TOKENS = (PAD, SOS, EOS, UNK, PSEUDO)

_WORD_CLEANER = re.compile(r"[^a-z0-9 ]+")


class Vocabulary:
    """Dense token-string to id map with reserved special slots."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValidationError("vocabulary must start with the reserved special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def sos_id(self) -> int:
        return self.index[SOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def pseudo_id(self) -> int:
        return self.index[PSEUDO]

    @classmethod
    def build(cls, words: list[str]) -> "Vocabulary":
        return cls(list(SPECIAL_TOKENS) + sorted(set(words)))

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line for line in lines if line])


def build_default_vocabulary() -> Vocabulary:
    """The canonical vocabulary covering every renderable caption and prompt."""
    return Vocabulary.build(caption_vocabulary_words())


def tokenize(caption: str, vocab: Vocabulary, max_len: int) -> np.ndarray:
    """Lowercase, strip punctuation, split on whitespace, frame with SOS/EOS.

    The result always has length ``max_len``; overlong captions are truncated
    with EOS forced at the last position. Unknown words map to the UNK id.
    This is a total function: any string tokenizes.
    """
    cleaned = _WORD_CLEANER.sub(" ", caption.lower())
    words = cleaned.split()
    ids = [vocab.sos_id]
    ids.extend(vocab.index.get(w, vocab.unk_id) for w in words[: max_len - 2])
    ids.append(vocab.eos_id)
    ids.extend([vocab.pad_id] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def pseudo_prompt_ids(vocab: Vocabulary, max_len: int | None = None) -> np.ndarray:
    """Token ids for the pseudo-word prompt, with the reserved slot spliced in.

    Unpadded by default; the encoder accepts any length up to its max.
    """
    ids = [vocab.sos_id]
    ids.extend(vocab.index[w] for w in PSEUDO_PROMPT_PREFIX.split())
    ids.append(vocab.pseudo_id)
    ids.extend(vocab.index[w] for w in PSEUDO_PROMPT_SUFFIX.split())
    ids.append(vocab.eos_id)
    if max_len is not None:
        ids.extend([vocab.pad_id] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def plain_prompt_ids(vocab: Vocabulary, max_len: int | None = None) -> np.ndarray:
    """Token ids for the caption-free inference prompt, unpadded by default."""
    words = PLAIN_PROMPT.split()
    ids = [vocab.sos_id] + [vocab.index[w] for w in words] + [vocab.eos_id]
    if max_len is not None:
        ids.extend([vocab.pad_id] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


# -- encoded token containers ----------------------------------------------------


@dataclass
class ImageTokens:
    """Class token plus local patch tokens, both in the joint space."""

    cls: Tensor    # [B, d]
    locals: Tensor  # [B, M, d]

    def sequence(self) -> Tensor:
        """Full token sequence [B, M+1, d] with the class token first."""
        batch, dim = self.cls.shape
        return concat([self.cls.reshape(batch, 1, dim), self.locals], axis=1)


@dataclass
class TextTokens:
    """Encoded text sequence with its EOS positions and padding mask."""

    sequence: Tensor       # [B, L, d]
    eos_index: np.ndarray  # [B]
    mask: np.ndarray       # [B, L] bool, True at attendable positions


def global_text_feature(text: TextTokens) -> Tensor:
    """The EOS-position token, used as the single-vector caption representative."""
    return select_positions(text.sequence, text.eos_index)


# -- encoders ---------------------------------------------------------------------


class ImageEncoder(Module):
    def __init__(self, channels: int, height: int, width: int,
                 patch_height: int, patch_width: int,
                 dim: int, blocks: int, heads: int, rng: np.random.Generator):
        if height % patch_height or width % patch_width:
            raise ShapeError(
                f"image {height}x{width} not divisible by patch {patch_height}x{patch_width}"
            )
        self.channels = channels
        self.height = height
        self.width = width
        self.patch_height = patch_height
        self.patch_width = patch_width
        self.num_patches = (height // patch_height) * (width // patch_width)
        patch_dim = channels * patch_height * patch_width
        self.patch_embed = Linear(patch_dim, dim, rng)
        self.cls_token = Tensor(truncated_normal(rng, (dim,)), requires_grad=True)
        self.pos_embed = Tensor(truncated_normal(rng, (self.num_patches + 1, dim)), requires_grad=True)
        self.blocks = [TransformerBlock(dim, heads, rng) for _ in range(blocks)]
        self.proj = Linear(dim, dim, rng)

    def _extract_patches(self, images: np.ndarray) -> np.ndarray:
        b, c, h, w = images.shape
        if (c, h, w) != (self.channels, self.height, self.width):
            raise ShapeError(
                f"expected images [B, {self.channels}, {self.height}, {self.width}], got {images.shape}"
            )
        ph, pw = self.patch_height, self.patch_width
        grid = images.reshape(b, c, h // ph, ph, w // pw, pw)
        patches = grid.transpose(0, 2, 4, 1, 3, 5).reshape(b, self.num_patches, c * ph * pw)
        return patches.astype(default_dtype())

    def __call__(self, images: np.ndarray) -> ImageTokens:
        patches = Tensor(self._extract_patches(np.asarray(images)))
        x = self.patch_embed(patches)
        x = prepend_token(self.cls_token, x)
        x = x + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.proj(x)
        return ImageTokens(cls=x[:, 0], locals=x[:, 1:])


class TextEncoder(Module):
    def __init__(self, vocab: Vocabulary, word_dim: int, joint_dim: int,
                 max_len: int, blocks: int, heads: int, rng: np.random.Generator):
        self.vocab_size = len(vocab)
        self.max_len = max_len
        self.pad_id = vocab.pad_id
        self.eos_id = vocab.eos_id
        self.pseudo_id = vocab.pseudo_id
        self.tok_embed = Tensor(truncated_normal(rng, (self.vocab_size, word_dim)), requires_grad=True)
        self.pos_embed = Tensor(truncated_normal(rng, (max_len, word_dim)), requires_grad=True)
        self.blocks = [TransformerBlock(word_dim, heads, rng) for _ in range(blocks)]
        self.proj = Linear(word_dim, joint_dim, rng)

    def _pseudo_position(self, ids: np.ndarray) -> int | None:
        rows, cols = np.nonzero(ids == self.pseudo_id)
        if rows.size == 0:
            return None
        positions = set(cols.tolist())
        if len(positions) != 1 or rows.size != ids.shape[0]:
            raise ContractError("pseudo-word slot must appear exactly once per row, at one position")
        return int(cols[0])

    def __call__(self, ids: np.ndarray, pseudo_embedding: Tensor | None = None) -> TextTokens:
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.shape[1] > self.max_len:
            raise ShapeError(f"sequence length {ids.shape[1]} exceeds max_len {self.max_len}")

        position = self._pseudo_position(ids)
        if position is not None and pseudo_embedding is None:
            raise ContractError("ids contain the pseudo-word slot but no embedding was provided")

        emb = take_rows(self.tok_embed, ids)
        if position is not None:
            batch, word_dim = pseudo_embedding.shape
            slot = pseudo_embedding.reshape(batch, 1, word_dim)
            emb = concat([emb[:, :position], slot, emb[:, position + 1:]], axis=1)

        x = emb + self.pos_embed[: ids.shape[1]]
        eos_index = np.argmax(ids == self.eos_id, axis=1)
        mask = np.arange(ids.shape[1])[None, :] <= eos_index[:, None]
        for block in self.blocks:
            x = block(x, key_mask=mask)
        x = self.proj(x)
        return TextTokens(sequence=x, eos_index=eos_index, mask=mask)
