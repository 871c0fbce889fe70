"""The assembled retrieval model: encoders, inversion, fusion, classifier.

Training consumes image/caption pairs; inference consumes images only. The
inference path encodes the fixed phrase "a photo of a person" (no
pseudo-word), so the whole caption-guided branch can be deleted from a
checkpoint without changing any retrieval feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cff import ContextualFeatureFusion, FusedFeature
from .cgi import CaptionGuidedInversion, PseudoWordState, inversion_forward
from .config import Config
from .encoders import (
    ImageEncoder,
    ImageTokens,
    TextEncoder,
    TextTokens,
    Vocabulary,
    global_text_feature,
    plain_prompt_ids,
    pseudo_prompt_ids,
)
from .errors import ContractError
from .nn import Linear, Module, Tensor, default_dtype

# Parameters under these prefixes follow the base learning rate; the rest
# (inversion, fusion, classifier) count as freshly initialized modules.
BASE_LR_PREFIXES = ("image_encoder.", "text_encoder.")
CGI_PREFIX = "cgi."


@dataclass
class TrainForward:
    img_tokens: ImageTokens
    img_global: Tensor
    caption_tokens: TextTokens
    pseudo: PseudoWordState | None
    prompt_tokens: TextTokens
    prompt_global: Tensor
    fused: FusedFeature | None
    logits: Tensor | None


class ReidModel(Module):
    def __init__(self, cfg: Config, vocab: Vocabulary, rng: np.random.Generator):
        self.image_encoder = ImageEncoder(
            cfg.model_channels, cfg.model_image_height, cfg.model_image_width,
            cfg.model_patch_height, cfg.model_patch_width,
            cfg.model_dim, cfg.model_image_blocks, cfg.model_heads, rng,
        )
        self.text_encoder = TextEncoder(
            vocab, cfg.model_word_dim, cfg.model_dim,
            cfg.model_max_len, cfg.model_text_blocks, cfg.model_heads, rng,
        )
        self.cgi = (
            CaptionGuidedInversion(cfg.model_dim, cfg.model_word_dim,
                                   cfg.cgi_num_queries, cfg.cgi_depth, cfg.model_heads, rng)
            if cfg.cgi_enabled else None
        )
        self.cff = (
            ContextualFeatureFusion(cfg.model_dim, cfg.cff_heads, cfg.cff_blocks,
                                    cfg.cff_mode, rng)
            if cfg.cff_enabled else None
        )
        self.classifier = (
            Linear(cfg.model_dim, cfg.model_num_classes, rng)
            if cfg.cff_enabled and cfg.model_num_classes > 0 else None
        )
        self.config = cfg
        self._plain_prompt = plain_prompt_ids(vocab)
        self._pseudo_prompt = pseudo_prompt_ids(vocab)

    def forward_train(self, images: np.ndarray, caption_ids: np.ndarray) -> TrainForward:
        cfg = self.config
        img_tokens = self.image_encoder(images)
        caption_tokens = self.text_encoder(caption_ids)

        if self.cgi is not None:
            pseudo = inversion_forward(self.cgi, img_tokens, caption_tokens,
                                       self.text_encoder, self._pseudo_prompt)
            prompt_tokens = pseudo.prompt_tokens
        else:
            pseudo = None
            batch = images.shape[0]
            ids = np.broadcast_to(self._plain_prompt, (batch, self._plain_prompt.shape[-1]))
            prompt_tokens = self.text_encoder(ids)

        fused = None
        logits = None
        if self.cff is not None:
            if cfg.cff_replace_q_with_image:
                fused = self.cff.fuse_image_query(img_tokens)
            else:
                fused = self.cff.fuse(prompt_tokens, img_tokens)
            if self.classifier is not None:
                logits = self.classifier(fused.h_global)

        return TrainForward(
            img_tokens=img_tokens,
            img_global=img_tokens.cls,
            caption_tokens=caption_tokens,
            pseudo=pseudo,
            prompt_tokens=prompt_tokens,
            prompt_global=global_text_feature(prompt_tokens),
            fused=fused,
            logits=logits,
        )

    def inference_feature(self, images: np.ndarray) -> np.ndarray:
        """L2-normalized retrieval embeddings; never reads a caption."""
        img_tokens = self.image_encoder(images)
        if self.cff is None:
            feat = img_tokens.cls.data
        elif self.config.cff_replace_q_with_image:
            feat = self.cff.fuse_image_query(img_tokens).h_global.data
        else:
            batch = images.shape[0]
            ids = np.broadcast_to(self._plain_prompt, (batch, self._plain_prompt.shape[-1]))
            prompt = self.text_encoder(ids)
            feat = self.cff.fuse(prompt, img_tokens).h_global.data
        norms = np.sqrt((feat * feat).sum(axis=1, keepdims=True))
        return (feat / norms).astype(np.float64)

    def triplet_feature(self, forward: TrainForward) -> Tensor:
        if self.config.loss_triplet_on == "image" or forward.fused is None:
            return forward.img_global
        return forward.fused.h_global


def parameter_groups(model: ReidModel) -> dict[str, str]:
    """Audit map: parameter path -> learning-rate group ('base' or 'new')."""
    groups = {}
    for name, _ in model.named_parameters():
        groups[name] = "base" if name.startswith(BASE_LR_PREFIXES) else "new"
    return groups


def build_model(cfg: Config, vocab: Vocabulary, seed: int) -> ReidModel:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x1017)))
    return ReidModel(cfg, vocab, rng)


def model_from_checkpoint_arrays(cfg: Config, vocab: Vocabulary,
                                 arrays: dict[str, np.ndarray]) -> ReidModel:
    """Rebuild a model and load weights; inference-only branches may be absent.

    Arrays under the caption-guided prefix are optional: inference never
    touches them, so a stripped checkpoint must reconstruct identically.
    """
    model = build_model(cfg, vocab, seed=0)
    expected = dict(model.named_parameters())
    missing = [n for n in expected if n not in arrays and not n.startswith(CGI_PREFIX)]
    if missing:
        raise ContractError(f"checkpoint is missing parameters: {missing[:3]}...")
    for name, param in expected.items():
        if name in arrays:
            param.data = np.asarray(arrays[name]).astype(default_dtype())
    return model
