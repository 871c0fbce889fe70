"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain loops over numpy scalars,
sharing no code with the library paths it checks.
"""

from __future__ import annotations

import math

import numpy as np


# -- gradient checking -----------------------------------------------------------


def central_difference(loss_fn, array: np.ndarray, index: tuple, h: float = 1e-5) -> float:
    """d loss / d array[index] by central finite differences, restoring the entry."""
    original = array[index]
    array[index] = original + h
    up = loss_fn()
    array[index] = original - h
    down = loss_fn()
    array[index] = original
    return (up - down) / (2.0 * h)

def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def max_param_gradcheck_error(loss_fn, named_params, rng: np.random.Generator,
                              coords_per_tensor: int = 2, h: float = 1e-5) -> float:
    """Compare populated ``grad``s against finite differences of ``loss_fn``.

    Samples a few coordinates per parameter tensor; returns the worst
    relative error seen. ``loss_fn`` must re-run the forward pass from the
    live parameter arrays.
    """
    worst = 0.0
    for name, param in named_params:
        assert param.grad is not None, f"no gradient for {name}"
        flat_size = param.data.size
        n = min(coords_per_tensor, flat_size)
        picks = rng.choice(flat_size, size=n, replace=False)
        for flat in picks:
            index = np.unravel_index(int(flat), param.data.shape)
            numeric = central_difference(loss_fn, param.data, index, h=h)
            analytic = float(param.grad[index])
            worst = max(worst, relative_error(analytic, numeric))
    return worst


# -- attention -----------------------------------------------------------------


def brute_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Double-loop softmax-weighted sum for 2-D q, k, v."""
    n_q, d = q.shape
    n_k = k.shape[0]
    out = np.zeros((n_q, v.shape[1]))
    for i in range(n_q):
        logits = np.array([np.dot(q[i], k[j]) / math.sqrt(d) for j in range(n_k)])
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        for j in range(n_k):
            out[i] += weights[j] * v[j]
    return out


# -- losses ----------------------------------------------------------------------


def _unit_rows(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(x.shape[0]):
        out[i] = x[i] / math.sqrt(float((x[i] * x[i]).sum()) + 1e-12)
    return out


def brute_directional_contrastive(anchors: np.ndarray, targets: np.ndarray,
                                  ids: np.ndarray, temperature: float = 1.0) -> float:
    """Triple-loop anchor-to-target contrastive loss."""
    a = _unit_rows(anchors)
    t = _unit_rows(targets)
    batch = len(ids)
    total = 0.0
    for i in range(batch):
        positives = [p for p in range(batch) if ids[p] == ids[i]]
        denom = sum(math.exp(np.dot(a[i], t[k]) / temperature) for k in range(batch))
        anchor_loss = 0.0
        for p in positives:
            anchor_loss += -math.log(math.exp(np.dot(a[i], t[p]) / temperature) / denom)
        total += anchor_loss / len(positives)
    return total / batch


def brute_label_smoothed_ce(logits: np.ndarray, labels: np.ndarray, eps: float) -> float:
    batch, n_classes = logits.shape
    total = 0.0
    for i in range(batch):
        z = logits[i] - logits[i].max()
        probs = np.exp(z) / np.exp(z).sum()
        loss = 0.0
        for c in range(n_classes):
            q = eps / n_classes + (1.0 - eps if c == labels[i] else 0.0)
            loss += -q * math.log(probs[c])
        total += loss
    return total / batch


def brute_batch_hard_triplet(features: np.ndarray, ids: np.ndarray, margin: float) -> float:
    batch = len(ids)
    total = 0.0
    for i in range(batch):
        d_pos = max(
            float(np.linalg.norm(features[i] - features[j]))
            for j in range(batch) if j != i and ids[j] == ids[i]
        )
        d_neg = min(
            float(np.linalg.norm(features[i] - features[j]))
            for j in range(batch) if ids[j] != ids[i]
        )
        total += max(d_pos - d_neg + margin, 0.0)
    return total / batch


# -- retrieval metrics ---------------------------------------------------------------


def brute_average_precision(relevance) -> float:
    relevance = [bool(r) for r in relevance]
    n_relevant = sum(relevance)
    assert n_relevant > 0
    score = 0.0
    hits = 0
    for rank, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            score += hits / rank
    return score / n_relevant


def brute_map_cmc(query_feats, query_meta, gallery_feats, gallery_meta, top_k=10):
    """Loop-and-sort reference for the full evaluation protocol.

    Metas are (image_id, identity_id, camera_id). Returns (mAP, cmc, skipped).
    """
    aps = []
    first_hits = []
    skipped = 0
    for qf, (qid, qident, qcam) in zip(query_feats, query_meta):
        entries = []
        for gf, (gid, gident, gcam) in zip(gallery_feats, gallery_meta):
            if gident == qident and gcam == qcam:
                continue
            entries.append((-float(np.dot(qf, gf)), gid, gident == qident))
        entries.sort()
        relevance = [rel for _, _, rel in entries]
        if not entries or not any(relevance):
            skipped += 1
            continue
        aps.append(brute_average_precision(relevance))
        first_hits.append(relevance.index(True) + 1)
    cmc = [sum(1 for h in first_hits if h <= k) / len(first_hits) for k in range(1, top_k + 1)]
    return float(np.mean(aps)), np.asarray(cmc), skipped
