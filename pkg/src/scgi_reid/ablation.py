"""Ablation harness: component arms, depth and query-count sweeps, and the
caption-corruption robustness sweep.

Each arm trains a fresh model per seed on the same dataset and is scored on
one shared query/gallery split so that differences come from the arm, not
the protocol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .captions import corrupt_attributes, render_caption
from .config import Config
from .encoders import Vocabulary
from .errors import ContractError
from .evaluator import evaluate
from .synthdata import PersonSample, split_query_gallery, with_caption
from .trainer import train

COMPONENT_ARMS: dict[str, dict[str, object]] = {
    "full": {"cgi.enabled": True, "cff.enabled": True, "cff.replace_q_with_image": False},
    "cff_only": {"cgi.enabled": False, "cff.enabled": True, "cff.replace_q_with_image": False},
    "cgi_only": {"cgi.enabled": True, "cff.enabled": False, "cff.replace_q_with_image": False},
    "image_as_q": {"cgi.enabled": True, "cff.enabled": True, "cff.replace_q_with_image": True},
}


@dataclass
class ArmResult:
    arm: str
    seed: int
    map: float
    rank1: float


def _train_and_score(cfg: Config, samples: list[PersonSample], vocab: Vocabulary,
                     query: list[PersonSample], gallery: list[PersonSample]) -> tuple[float, float]:
    model, _ = train(cfg, samples, vocab)
    report = evaluate(model, query, gallery)
    return report.map, float(report.cmc[0])


def _split(samples: list[PersonSample], split_seed: int):
    rng = np.random.default_rng(np.random.SeedSequence((split_seed, 0x5711)))
    return split_query_gallery(samples, rng)


def _resolve_eval(samples: list[PersonSample], eval_samples: list[PersonSample] | None,
                  split_seed: int):
    """Query/gallery from the held-out set when given, else from ``samples``."""
    return _split(eval_samples if eval_samples is not None else samples, split_seed)


def run_component_ablation(cfg: Config, samples: list[PersonSample], vocab: Vocabulary,
                           seeds: list[int],
                           eval_samples: list[PersonSample] | None = None) -> list[ArmResult]:
    """Train {full, fusion-only, inversion-only, image-as-query} per seed."""
    if len(seeds) < 2:
        raise ContractError(f"component ablation needs at least 2 seeds, got {len(seeds)}")
    query, gallery = _resolve_eval(samples, eval_samples, cfg.eval_split_seed)
    results = []
    for arm, flags in COMPONENT_ARMS.items():
        arm_cfg = cfg.with_overrides(flags)
        for seed in seeds:
            run_cfg = arm_cfg.with_overrides({"train.seed": seed})
            m, r1 = _train_and_score(run_cfg, samples, vocab, query, gallery)
            results.append(ArmResult(arm=arm, seed=seed, map=m, rank1=r1))
    return results


def summarize(results: list[ArmResult]) -> dict[str, tuple[float, float]]:
    """Per-arm means of (mAP, rank-1), in first-seen arm order."""
    order: list[str] = []
    buckets: dict[str, list[ArmResult]] = {}
    for r in results:
        if r.arm not in buckets:
            buckets[r.arm] = []
            order.append(r.arm)
        buckets[r.arm].append(r)
    return {
        arm: (
            float(np.mean([r.map for r in buckets[arm]])),
            float(np.mean([r.rank1 for r in buckets[arm]])),
        )
        for arm in order
    }


def run_depth_sweep(cfg: Config, samples: list[PersonSample], vocab: Vocabulary,
                    seeds: list[int], depths=(1, 2, 3, 4, 5, 6),
                    eval_samples: list[PersonSample] | None = None) -> list[ArmResult]:
    query, gallery = _resolve_eval(samples, eval_samples, cfg.eval_split_seed)
    results = []
    for depth in depths:
        for seed in seeds:
            run_cfg = cfg.with_overrides({"cgi.depth": depth, "train.seed": seed})
            m, r1 = _train_and_score(run_cfg, samples, vocab, query, gallery)
            results.append(ArmResult(arm=f"depth={depth}", seed=seed, map=m, rank1=r1))
    return results


def run_query_sweep(cfg: Config, samples: list[PersonSample], vocab: Vocabulary,
                    seeds: list[int], query_counts=(1, 2, 4, 8),
                    eval_samples: list[PersonSample] | None = None) -> list[ArmResult]:
    query, gallery = _resolve_eval(samples, eval_samples, cfg.eval_split_seed)
    results = []
    for count in query_counts:
        for seed in seeds:
            run_cfg = cfg.with_overrides({"cgi.num_queries": count, "train.seed": seed})
            m, r1 = _train_and_score(run_cfg, samples, vocab, query, gallery)
            results.append(ArmResult(arm=f"queries={count}", seed=seed, map=m, rank1=r1))
    return results


def corrupt_dataset_captions(samples: list[PersonSample], p: float, vocab: Vocabulary,
                             max_len: int, seed: int) -> list[PersonSample]:
    """Re-render every caption from independently corrupted attributes."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
    out = []
    for s in samples:
        caption = render_caption(corrupt_attributes(s.attrs, p, rng))
        out.append(with_caption(s, caption, vocab, max_len))
    return out


@dataclass
class CorruptionResult:
    corrupt_p: float
    seed: int
    map: float
    rank1: float


def run_corruption_sweep(cfg: Config, samples: list[PersonSample], vocab: Vocabulary,
                         seeds: list[int], ps=(0.0, 0.2, 0.5),
                         corruption_seed: int = 11,
                         eval_samples: list[PersonSample] | None = None) -> list[CorruptionResult]:
    """Measure retrieval quality as caption noise grows; measurement only."""
    query, gallery = _resolve_eval(samples, eval_samples, cfg.eval_split_seed)
    results = []
    for p in ps:
        noisy = corrupt_dataset_captions(samples, p, vocab, cfg.model_max_len, corruption_seed)
        for seed in seeds:
            run_cfg = cfg.with_overrides({"train.seed": seed})
            m, r1 = _train_and_score(run_cfg, noisy, vocab, query, gallery)
            results.append(CorruptionResult(corrupt_p=p, seed=seed, map=m, rank1=r1))
    return results


def corruption_summary(results: list[CorruptionResult]) -> list[tuple[float, float, float]]:
    """Rows of (p, mean mAP, mean rank-1), sorted by p."""
    ps = sorted({r.corrupt_p for r in results})
    rows = []
    for p in ps:
        sel = [r for r in results if r.corrupt_p == p]
        rows.append((p, float(np.mean([r.map for r in sel])),
                     float(np.mean([r.rank1 for r in sel]))))
    return rows


def is_monotone_nonincreasing(values: list[float], tolerance: float = 0.0) -> bool:
    return all(b <= a + tolerance for a, b in zip(values, values[1:]))
