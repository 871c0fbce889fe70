"""Command-line entry point.

Subcommands: synth-data, caption, train, eval, ablate, inspect. Flags
override config-file values. Report-producing commands write figures next
to their delimited outputs. Exit codes: 0 success, 1 validation or runtime
failure (single-line diagnostic on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import ablation, reporting
from .captions import AttributeRecord, CaptionRecord, corrupt_attributes, render_caption, save_caption_file
from .config import Config, load_config
from .encoders import build_default_vocabulary
from .errors import ScgiError
from .evaluator import evaluate
from .model import model_from_checkpoint_arrays, parameter_groups
from .nn import file_sha256, using_dtype
from .synthdata import (
    generate_dataset,
    load_dataset,
    load_manifest,
    save_dataset,
    split_by_identity,
    split_query_gallery,
)
from .trainer import group_summary, load_model_checkpoint, save_model_checkpoint, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scgi-reid",
        description="Caption-guided person re-identification pipeline on a synthetic benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic labeled dataset directory")
    p.add_argument("--ids", type=int, required=True, help="number of identities")
    p.add_argument("--per-id", type=int, required=True, help="images per identity")
    p.add_argument("--cams", type=int, required=True, help="number of cameras")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--noise-sigma", type=float, default=0.1)

    p = sub.add_parser("caption", help="render captions (optionally corrupted) from a manifest")
    p.add_argument("--manifest", required=True, help="dataset manifest with attribute columns")
    p.add_argument("--corrupt-p", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output caption file")

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--captions", help="caption file overriding the bundled one")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="report text output path")
    p.add_argument("--split-seed", type=int, help="override eval.split_seed")
    p.add_argument("--dump-ranked", help="optional per-query top-10 TSV path")

    p = sub.add_parser("ablate", help="run ablation arms or sweeps and report means")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated training seeds")
    p.add_argument("--out", required=True, help="output directory for tables and figures")
    p.add_argument("--sweep", choices=("components", "depth", "queries", "corruption"),
                   default="components")
    p.add_argument("--corrupt-ps", default="0,0.2,0.5",
                   help="comma-separated corruption probabilities (corruption sweep)")
    p.add_argument("--holdout-ids", type=int, default=0,
                   help="evaluate on this many held-out identities (0: evaluate on the training identities)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("inspect", help="print checkpoint parameter groups and config hash")
    p.add_argument("--checkpoint", required=True)

    return parser


def _load_cfg(path: str | None, sets: list[str], seed: int | None = None) -> Config:
    cfg = load_config(path) if path else Config()
    overrides = {}
    for item in sets:
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if seed is not None:
        overrides["train.seed"] = seed
    return cfg.with_overrides(overrides) if overrides else cfg


def _cmd_synth_data(args) -> int:
    vocab = build_default_vocabulary()
    samples = generate_dataset(args.ids, args.per_id, args.cams, args.seed,
                               noise_sigma=args.noise_sigma, vocab=vocab)
    save_dataset(args.out, samples, vocab)
    print(f"wrote {len(samples)} samples ({args.ids} ids x {args.per_id}) to {args.out}")
    return 0


def _cmd_caption(args) -> int:
    rows = load_manifest(args.manifest)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0xCA)))
    records = []
    for image_id, identity_id, camera_id, attrs in rows:
        noisy: AttributeRecord = corrupt_attributes(attrs, args.corrupt_p, rng)
        records.append(CaptionRecord(image_id, identity_id, camera_id, render_caption(noisy)))
    save_caption_file(args.out, records)
    print(f"wrote {len(records)} captions (corrupt_p={args.corrupt_p}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args.config, args.set, seed=args.seed)
    samples, vocab = load_dataset(args.data, captions_path=args.captions,
                                  max_len=cfg.model_max_len)
    model, log = train(cfg, samples, vocab)
    save_model_checkpoint(args.out, model)
    runlog_path = Path(args.out).with_suffix(".runlog.tsv")
    log.save(runlog_path)
    reporting.save_loss_figure(Path(args.out).with_suffix(".loss.png"), log)
    final = log.records[-1]
    print(f"trained {cfg.train_epochs} epochs in {log.wall_time_s:.1f}s; "
          f"final l_total={final.l_id + final.l_tri + final.l_t2i + final.l_i2t:.4f}; "
          f"checkpoint {args.out}; runlog {runlog_path}")
    return 0


def _load_model(checkpoint_path):
    cfg, arrays, meta = load_model_checkpoint(checkpoint_path)
    vocab = build_default_vocabulary()
    with using_dtype(np.float64 if cfg.train_dtype == "float64" else np.float32):
        model = model_from_checkpoint_arrays(cfg, vocab, arrays)
    return model, cfg, meta


def _cmd_eval(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    samples, _ = load_dataset(args.data, max_len=cfg.model_max_len)
    split_seed = args.split_seed if args.split_seed is not None else cfg.eval_split_seed
    rng = np.random.default_rng(np.random.SeedSequence((split_seed, 0x5711)))
    query, gallery = split_query_gallery(samples, rng)
    report = evaluate(model, query, gallery, top_k=cfg.eval_cmc_k,
                      checkpoint_hash=file_sha256(args.checkpoint),
                      collect_ranked=args.dump_ranked is not None)
    reporting.write_metrics_report(args.report, report)
    reporting.save_cmc_figure(str(args.report) + ".png", report)
    if args.dump_ranked:
        reporting.write_ranked_lists(args.dump_ranked, report)
    print(f"mAP={report.map:.4f} rank1={report.cmc[0]:.4f} "
          f"({report.n_queries} queries, {report.n_skipped} skipped); report {args.report}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    samples, vocab = load_dataset(args.data, max_len=cfg.model_max_len)
    eval_samples = None
    if args.holdout_ids > 0:
        samples, eval_samples = split_by_identity(samples, args.holdout_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.sweep == "components":
        results = ablation.run_component_ablation(cfg, samples, vocab, seeds,
                                                  eval_samples=eval_samples)
        summary = ablation.summarize(results)
        reporting.write_tsv(out / "ablation_components.tsv",
                            ["arm", "seed", "map", "rank1"],
                            [(r.arm, r.seed, repr(r.map), repr(r.rank1)) for r in results])
        reporting.save_component_figure(out / "ablation_components.png", summary)
        for arm, (m, r1) in summary.items():
            print(f"{arm}: mean mAP={m:.4f} mean rank1={r1:.4f}")
    elif args.sweep in ("depth", "queries"):
        runner = ablation.run_depth_sweep if args.sweep == "depth" else ablation.run_query_sweep
        results = runner(cfg, samples, vocab, seeds, eval_samples=eval_samples)
        summary = ablation.summarize(results)
        xs = [arm.split("=")[1] for arm in summary]
        reporting.write_tsv(out / f"sweep_{args.sweep}.tsv",
                            ["arm", "seed", "map", "rank1"],
                            [(r.arm, r.seed, repr(r.map), repr(r.rank1)) for r in results])
        reporting.save_sweep_figure(out / f"sweep_{args.sweep}.png", args.sweep,
                                    xs, [v[0] for v in summary.values()],
                                    [v[1] for v in summary.values()])
        for arm, (m, r1) in summary.items():
            print(f"{arm}: mean mAP={m:.4f} mean rank1={r1:.4f}")
    else:
        ps = [float(s) for s in args.corrupt_ps.split(",") if s.strip()]
        results = ablation.run_corruption_sweep(cfg, samples, vocab, seeds, ps=ps,
                                                eval_samples=eval_samples)
        rows = ablation.corruption_summary(results)
        reporting.write_tsv(out / "corruption.tsv",
                            ["corrupt_p", "seed", "map", "rank1"],
                            [(r.corrupt_p, r.seed, repr(r.map), repr(r.rank1)) for r in results])
        reporting.save_sweep_figure(out / "corruption.png", "caption corruption p",
                                    [r[0] for r in rows], [r[1] for r in rows],
                                    [r[2] for r in rows])
        monotone = ablation.is_monotone_nonincreasing([r[1] for r in rows])
        for p, m, r1 in rows:
            print(f"corrupt_p={p}: mean mAP={m:.4f} mean rank1={r1:.4f}")
        print(f"mAP monotone non-increasing with corruption: {monotone}")
    return 0


def _cmd_inspect(args) -> int:
    model, cfg, meta = _load_model(args.checkpoint)
    print(f"checkpoint: {args.checkpoint}")
    print(f"config_hash: {meta.get('config_hash', cfg.config_hash())}")
    print(f"file_sha256: {file_sha256(args.checkpoint)}")
    groups = parameter_groups(model)
    total = 0
    for name, group, shape in group_summary(model):
        count = int(np.prod(shape)) if shape else 1
        total += count
        print(f"{group:4s} {name:50s} {shape}")
    counts = {"base": 0, "new": 0}
    for name, p in model.named_parameters():
        counts[groups[name]] += p.data.size
    print(f"parameters: total={total} base={counts['base']} new={counts['new']}")
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "caption": _cmd_caption,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "inspect": _cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ScgiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())
