"""Retrieval evaluation: cross-camera ranking, mean average precision, CMC.

Gallery entries sharing both identity and camera with the query are
excluded before ranking; remaining entries are ordered by descending cosine
similarity with ties broken by ascending gallery id, so reports are
reproducible byte-for-byte.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import ReidModel
from .synthdata import PersonSample

THREADS_ENV_VAR = "SCGI_THREADS"
PROTOCOL = "cross-camera;excl=same-id+same-cam;sim=cosine;ties=gallery-id"
_FEATURE_BATCH = 64


@dataclass
class RankedList:
    query_id: str
    gallery_ids: list[str]
    relevance: np.ndarray  # bool per position


@dataclass
class MetricsReport:
    map: float
    cmc: np.ndarray          # cmc[k-1] = CMC at rank k
    n_queries: int
    n_skipped: int
    protocol: str = PROTOCOL
    checkpoint_hash: str = ""
    ranked_lists: list[RankedList] = field(default_factory=list)


def evaluation_threads() -> int:
    """Evaluation parallelism cap taken from the environment (default 1)."""
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def rank_gallery(query_feat: np.ndarray, gallery_feats: np.ndarray,
                 query_meta: tuple[str, int, int],
                 gallery_meta: list[tuple[str, int, int]]) -> RankedList | None:
    """Rank the valid gallery for one query; None when nothing valid remains.

    Metas are (image_id, identity_id, camera_id) triples; features must be
    L2-normalized so dot products are cosine similarities.
    """
    q_id, q_identity, q_cam = query_meta
    keep = [i for i, (_, identity, cam) in enumerate(gallery_meta)
            if not (identity == q_identity and cam == q_cam)]
    if not keep:
        return None
    sims = gallery_feats[keep] @ query_feat
    names = [gallery_meta[i][0] for i in keep]
    order = sorted(range(len(keep)), key=lambda j: (-sims[j], names[j]))
    gallery_ids = [names[j] for j in order]
    relevance = np.asarray(
        [gallery_meta[keep[j]][1] == q_identity for j in order], dtype=bool
    )
    return RankedList(query_id=q_id, gallery_ids=gallery_ids, relevance=relevance)


def average_precision(relevance) -> float:
    """AP of a binary relevance sequence: mean of precision at each hit."""
    rel = np.asarray(relevance, dtype=bool)
    total = int(rel.sum())
    if total == 0:
        raise ContractError("average precision is undefined without a relevant entry")
    hits = np.cumsum(rel)
    ranks = np.nonzero(rel)[0] + 1
    return float((hits[rel] / ranks).sum() / total)


def cmc_from_first_hits(first_hits: list[int], top_k: int) -> np.ndarray:
    """CMC curve: fraction of queries whose first hit lands within rank k."""
    hits = np.asarray(first_hits)
    return np.asarray([(hits <= k).mean() for k in range(1, top_k + 1)])


def extract_features(model: ReidModel, samples: list[PersonSample],
                     threads: int | None = None) -> np.ndarray:
    """Inference features for all samples; chunked, optionally threaded."""
    threads = threads or evaluation_threads()
    chunks = [samples[i:i + _FEATURE_BATCH] for i in range(0, len(samples), _FEATURE_BATCH)]

    def embed(chunk):
        images = np.stack([s.image for s in chunk])
        return model.inference_feature(images)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(embed, chunks))
    else:
        parts = [embed(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def evaluate(model: ReidModel, query: list[PersonSample], gallery: list[PersonSample],
             top_k: int = 10, checkpoint_hash: str = "",
             collect_ranked: bool = False) -> MetricsReport:
    if not query or not gallery:
        raise ContractError("evaluation needs non-empty query and gallery sets")
    q_feats = extract_features(model, query)
    g_feats = extract_features(model, gallery)
    g_meta = [(s.image_id, s.identity_id, s.camera_id) for s in gallery]

    aps: list[float] = []
    first_hits: list[int] = []
    skipped = 0
    ranked_lists: list[RankedList] = []
    for s, feat in zip(query, q_feats):
        ranked = rank_gallery(feat, g_feats, (s.image_id, s.identity_id, s.camera_id), g_meta)
        if ranked is None or not ranked.relevance.any():
            skipped += 1
            continue
        aps.append(average_precision(ranked.relevance))
        first_hits.append(int(np.nonzero(ranked.relevance)[0][0]) + 1)
        if collect_ranked:
            ranked_lists.append(RankedList(
                query_id=ranked.query_id,
                gallery_ids=ranked.gallery_ids[:top_k],
                relevance=ranked.relevance[:top_k],
            ))
    if not aps:
        raise ContractError("every query was skipped; gallery has no valid entries")
    return MetricsReport(
        map=float(np.mean(aps)),
        cmc=cmc_from_first_hits(first_hits, top_k),
        n_queries=len(aps),
        n_skipped=skipped,
        checkpoint_hash=checkpoint_hash,
        ranked_lists=ranked_lists,
    )
