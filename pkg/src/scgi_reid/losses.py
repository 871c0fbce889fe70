"""Training objectives: bidirectional supervised contrastive loss,
label-smoothed identity cross-entropy, batch-hard triplet loss, and their
unweighted total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .nn import Tensor, l2_normalize, log_softmax, zeros


@dataclass
class LossBundle:
    l_id: Tensor
    l_tri: Tensor
    l_t2i: Tensor
    l_i2t: Tensor
    l_con: Tensor
    l_total: Tensor

    def floats(self) -> dict[str, float]:
        return {
            "l_id": self.l_id.item(),
            "l_tri": self.l_tri.item(),
            "l_t2i": self.l_t2i.item(),
            "l_i2t": self.l_i2t.item(),
            "l_con": self.l_con.item(),
            "l_total": self.l_total.item(),
        }


def similarity_matrix(a: Tensor, b: Tensor, temperature: float = 1.0) -> Tensor:
    """Dot products of L2-normalized rows, optionally divided by a temperature."""
    sims = l2_normalize(a) @ l2_normalize(b).mT
    if temperature != 1.0:
        sims = sims / temperature
    return sims


def _positive_mask(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    return ids[:, None] == ids[None, :]


def _directional_contrastive(anchors: Tensor, targets: Tensor, ids: np.ndarray,
                             temperature: float) -> Tensor:
    mask = _positive_mask(ids)
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ContractError("every anchor needs at least one positive in the batch")
    sims = similarity_matrix(anchors, targets, temperature)
    log_probs = log_softmax(sims, axis=-1)
    per_anchor = -(log_probs * Tensor(mask.astype(float))).sum(axis=1) / Tensor(counts.astype(float))
    return per_anchor.mean()


def contrastive_t2i(text_emb: Tensor, img_emb: Tensor, ids: np.ndarray,
                    temperature: float = 1.0) -> Tensor:
    """Text-anchored contrastive loss: positives averaged, then anchors averaged."""
    return _directional_contrastive(text_emb, img_emb, ids, temperature)


def contrastive_i2t(img_emb: Tensor, text_emb: Tensor, ids: np.ndarray,
                    temperature: float = 1.0) -> Tensor:
    """Image-anchored mirror of :func:`contrastive_t2i`."""
    return _directional_contrastive(img_emb, text_emb, ids, temperature)


def id_loss(logits: Tensor, labels: np.ndarray, label_smoothing: float = 0.1) -> Tensor:
    """Cross-entropy against a smoothed one-hot target, averaged over the batch."""
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ContractError(f"labels must lie in [0, {n_classes}), got {labels.min()}..{labels.max()}")
    q = np.full((batch, n_classes), label_smoothing / n_classes)
    q[np.arange(batch), labels] += 1.0 - label_smoothing
    log_probs = log_softmax(logits, axis=-1)
    return -(log_probs * Tensor(q)).sum(axis=1).mean()


def pairwise_distances(features: Tensor) -> Tensor:
    """Euclidean distance matrix; tiny epsilon keeps sqrt differentiable at 0."""
    sq = (features * features).sum(axis=1, keepdims=True)
    d2 = (sq + sq.mT - 2.0 * (features @ features.mT)).relu()
    return (d2 + 1e-12).sqrt()


def triplet_loss(features: Tensor, ids: np.ndarray, margin: float = 0.3) -> Tensor:
    """Batch-hard triplet loss: hardest positive and negative per anchor."""
    ids = np.asarray(ids)
    same = _positive_mask(ids)
    pos_mask = same & ~np.eye(len(ids), dtype=bool)
    neg_mask = ~same
    if not pos_mask.any(axis=1).all():
        raise ContractError("every identity in the batch needs at least 2 samples")
    if not neg_mask.any(axis=1).all():
        raise ContractError("every anchor needs at least one non-matching sample")
    dist = pairwise_distances(features)
    big = 1e9
    d_pos = (dist * Tensor(pos_mask.astype(float))).max(axis=1)
    d_neg = (dist + Tensor(np.where(neg_mask, 0.0, big))).min(axis=1)
    return (d_pos - d_neg + margin).relu().mean()


def total_loss(l_id: Tensor | None, l_tri: Tensor | None,
               l_t2i: Tensor, l_i2t: Tensor) -> LossBundle:
    """Unweighted sum; absent supervised terms enter as exact zeros."""
    if l_id is None:
        l_id = zeros(())
    if l_tri is None:
        l_tri = zeros(())
    l_con = l_t2i + l_i2t
    return LossBundle(
        l_id=l_id,
        l_tri=l_tri,
        l_t2i=l_t2i,
        l_i2t=l_i2t,
        l_con=l_con,
        l_total=l_id + l_tri + l_con,
    )
