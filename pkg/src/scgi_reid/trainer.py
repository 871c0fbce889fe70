"""Training loop: PK batches, two learning-rate groups, warmup/decay schedule.

Freshly initialized modules (inversion, fusion, classifier) train at a
higher learning rate than the encoders, mirroring fine-tuning practice.
With the caption branch disabled the loop degrades to contrastive-only
training against the plain prompt; with fusion disabled the supervised
identity and triplet terms drop out.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, config_from_dict
from .encoders import Vocabulary
from .errors import ContractError, TrainingDiverged
from .losses import LossBundle, contrastive_i2t, contrastive_t2i, id_loss, total_loss, triplet_loss
from .model import BASE_LR_PREFIXES, ReidModel, build_model, parameter_groups
from .nn import Adam, default_dtype, load_container, save_container, using_dtype
from .nn.tensor import first_nonfinite
from .synthdata import PersonSample, augment_images, sample_pk_batch

CHECKPOINT_KIND = "model-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class RunRecord:
    epoch: int
    step: int
    l_id: float
    l_tri: float
    l_t2i: float
    l_i2t: float
    lr_base: float
    lr_new: float

    def line(self) -> str:
        return (f"{self.epoch}\t{self.step}\t{self.l_id!r}\t{self.l_tri!r}"
                f"\t{self.l_t2i!r}\t{self.l_i2t!r}\t{self.lr_base!r}\t{self.lr_new!r}")


@dataclass
class RunLog:
    config_hash: str
    records: list[RunRecord] = field(default_factory=list)
    eval_snapshots: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_text(self) -> str:
        """Canonical serialization; wall time is excluded so equal runs match byte-for-byte."""
        lines = [
            "# runlog v1",
            f"# config_hash={self.config_hash}",
            "# epoch\tstep\tl_id\tl_tri\tl_t2i\tl_i2t\tlr_base\tlr_new",
        ]
        lines.extend(r.line() for r in self.records)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def lr_schedule(epoch: int, cfg: Config) -> tuple[float, float]:
    """Linear warmup from a tenth of the target rate, then stepwise decay."""
    if epoch < 0:
        raise ContractError(f"epoch must be non-negative, got {epoch}")
    if cfg.train_warmup_epochs > 0 and epoch < cfg.train_warmup_epochs:
        scale = 0.1 + 0.9 * (epoch / cfg.train_warmup_epochs)
    elif cfg.train_decay_epochs > 0:
        scale = cfg.train_decay_factor ** (epoch // cfg.train_decay_epochs)
    else:
        scale = 1.0
    return cfg.train_base_lr * scale, cfg.train_new_module_lr * scale


def train(cfg: Config, samples: list[PersonSample], vocab: Vocabulary) -> tuple[ReidModel, RunLog]:
    """Run the full schedule on ``samples``; deterministic per (seed, config)."""
    identities = sorted({s.identity_id for s in samples})
    label_of = {identity: i for i, identity in enumerate(identities)}
    cfg = cfg.with_overrides({"model.num_classes": len(identities)})

    with using_dtype(np.float64 if cfg.train_dtype == "float64" else np.float32):
        model = build_model(cfg, vocab, cfg.train_seed)
        groups = parameter_groups(model)
        named = dict(model.named_parameters())
        base_params = {n: p for n, p in named.items() if groups[n] == "base"}
        new_params = {n: p for n, p in named.items() if groups[n] == "new"}
        opt_base = Adam(base_params, lr=cfg.train_base_lr)
        opt_new = Adam(new_params, lr=cfg.train_new_module_lr)

        data_rng = np.random.default_rng(np.random.SeedSequence((cfg.train_seed, 0xBA7C)))
        log = RunLog(config_hash=cfg.config_hash())
        started = time.perf_counter()

        for epoch in range(cfg.train_epochs):
            lr_base, lr_new = lr_schedule(epoch, cfg)
            for step in range(cfg.train_steps_per_epoch):
                batch = sample_pk_batch(samples, cfg.train_p_ids, cfg.train_k_per, data_rng)
                images = np.stack([s.image for s in batch.samples]).astype(default_dtype())
                images = augment_images(images, data_rng, cfg.data_flip, cfg.data_erasing)
                caption_ids = np.stack([s.caption_ids for s in batch.samples])
                labels = np.asarray([label_of[s.identity_id] for s in batch.samples])

                bundle = _training_losses(model, cfg, images, caption_ids, labels)
                if not np.isfinite(bundle.l_total.data):
                    culprit = first_nonfinite(bundle.l_total) or "l_total"
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step}; "
                        f"first non-finite tensor: '{culprit}'"
                    )
                opt_base.zero_grad()
                opt_new.zero_grad()
                bundle.l_total.backward()
                opt_base.step(lr=lr_base)
                opt_new.step(lr=lr_new)

                values = bundle.floats()
                log.records.append(RunRecord(
                    epoch=epoch, step=step,
                    l_id=values["l_id"], l_tri=values["l_tri"],
                    l_t2i=values["l_t2i"], l_i2t=values["l_i2t"],
                    lr_base=lr_base, lr_new=lr_new,
                ))
        log.wall_time_s = time.perf_counter() - started
    return model, log


def _training_losses(model: ReidModel, cfg: Config, images: np.ndarray,
                     caption_ids: np.ndarray, labels: np.ndarray) -> LossBundle:
    fw = model.forward_train(images, caption_ids)
    l_t2i = contrastive_t2i(fw.prompt_global, fw.img_global, labels, cfg.loss_temperature)
    l_i2t = contrastive_i2t(fw.img_global, fw.prompt_global, labels, cfg.loss_temperature)
    l_id = None
    l_tri = None
    if fw.fused is not None and fw.logits is not None:
        l_id = id_loss(fw.logits, labels, cfg.loss_label_smoothing)
        l_tri = triplet_loss(model.triplet_feature(fw), labels, cfg.loss_margin)
    return total_loss(l_id, l_tri, l_t2i, l_i2t)


# -- checkpoint IO --------------------------------------------------------------------


def save_model_checkpoint(path, model: ReidModel) -> None:
    meta = {
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
    }
    save_container(path, model.state_arrays(), meta=meta)


def load_model_checkpoint(path) -> tuple[Config, dict[str, np.ndarray], dict]:
    arrays, meta = load_container(path)
    cfg = config_from_dict(meta["config"])
    return cfg, arrays, meta


def group_summary(model: ReidModel) -> list[tuple[str, str, tuple[int, ...]]]:
    """(name, lr group, shape) rows for auditing parameter-group assignment."""
    groups = parameter_groups(model)
    return [(name, groups[name], tuple(p.data.shape)) for name, p in model.named_parameters()]
