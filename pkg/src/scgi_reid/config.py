"""Run configuration: a flat ``key=value`` text format with typed defaults.

Every tunable in the pipeline lives here under a dotted key. Files hold one
``key=value`` pair per line; ``#`` starts a comment. Values are coerced to
the type of the corresponding default. The configuration hash is the SHA-256
of the canonical serialization, so equal configs always hash equally.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ContractError, ParseError

# dataclass field name -> dotted file key
_KEY_MAP = {
    "model_dim": "model.dim",
    "model_word_dim": "model.word_dim",
    "model_heads": "model.heads",
    "model_image_blocks": "model.image_blocks",
    "model_text_blocks": "model.text_blocks",
    "model_channels": "model.channels",
    "model_image_height": "model.image_height",
    "model_image_width": "model.image_width",
    "model_patch_height": "model.patch_height",
    "model_patch_width": "model.patch_width",
    "model_max_len": "model.max_len",
    "model_num_classes": "model.num_classes",
    "cgi_enabled": "cgi.enabled",
    "cgi_depth": "cgi.depth",
    "cgi_num_queries": "cgi.num_queries",
    "cff_enabled": "cff.enabled",
    "cff_mode": "cff.mode",
    "cff_blocks": "cff.blocks",
    "cff_heads": "cff.heads",
    "cff_replace_q_with_image": "cff.replace_q_with_image",
    "loss_margin": "loss.margin",
    "loss_label_smoothing": "loss.label_smoothing",
    "loss_temperature": "loss.temperature",
    "loss_triplet_on": "loss.triplet_on",
    "train_epochs": "train.epochs",
    "train_steps_per_epoch": "train.steps_per_epoch",
    "train_p_ids": "train.p_ids",
    "train_k_per": "train.k_per",
    "train_base_lr": "train.base_lr",
    "train_new_module_lr": "train.new_module_lr",
    "train_warmup_epochs": "train.warmup_epochs",
    "train_decay_epochs": "train.decay_epochs",
    "train_decay_factor": "train.decay_factor",
    "train_seed": "train.seed",
    "train_dtype": "train.dtype",
    "data_flip": "data.flip",
    "data_erasing": "data.erasing",
    "eval_split_seed": "eval.split_seed",
    "eval_cmc_k": "eval.cmc_k",
}
_FIELD_MAP = {v: k for k, v in _KEY_MAP.items()}

_CHOICES = {
    "cff_mode": ("cls_only", "all_tokens"),
    "loss_triplet_on": ("fused", "image"),
    "train_dtype": ("float32", "float64"),
}


@dataclass(frozen=True)
class Config:
    # joint-space model
    model_dim: int = 64
    model_word_dim: int = 64
    model_heads: int = 4
    model_image_blocks: int = 2
    model_text_blocks: int = 2
    model_channels: int = 3
    model_image_height: int = 32
    model_image_width: int = 16
    model_patch_height: int = 8
    model_patch_width: int = 8
    model_max_len: int = 32
    model_num_classes: int = 0  # filled in from the dataset at training time

    # caption-guided inversion
    cgi_enabled: bool = True
    cgi_depth: int = 1
    cgi_num_queries: int = 2

    # contextual feature fusion
    cff_enabled: bool = True
    cff_mode: str = "cls_only"
    cff_blocks: int = 2
    cff_heads: int = 4
    cff_replace_q_with_image: bool = False

    # objectives
    loss_margin: float = 0.3
    loss_label_smoothing: float = 0.1
    loss_temperature: float = 1.0
    loss_triplet_on: str = "fused"

    # optimization schedule
    train_epochs: int = 30
    train_steps_per_epoch: int = 20
    train_p_ids: int = 16
    train_k_per: int = 4
    train_base_lr: float = 5e-4
    train_new_module_lr: float = 5e-3
    train_warmup_epochs: int = 10
    train_decay_epochs: int = 20
    train_decay_factor: float = 0.1
    train_seed: int = 0
    train_dtype: str = "float32"

    # batch augmentation
    data_flip: bool = True
    data_erasing: bool = False

    # evaluation
    eval_split_seed: int = 97
    eval_cmc_k: int = 10

    def __post_init__(self):
        for field_name, allowed in _CHOICES.items():
            value = getattr(self, field_name)
            if value not in allowed:
                raise ContractError(
                    f"{_KEY_MAP[field_name]} must be one of {allowed}, got '{value}'"
                )
        if self.train_warmup_epochs > self.train_epochs:
            raise ContractError("train.warmup_epochs must not exceed train.epochs")
        if self.train_base_lr <= 0 or self.train_new_module_lr <= 0:
            raise ContractError("learning rates must be positive")
        if self.cgi_depth < 1:
            raise ContractError("cgi.depth must be at least 1")

    # -- serialization --------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: _KEY_MAP[f.name]):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{_KEY_MAP[f.name]}={value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {_KEY_MAP[f.name]: getattr(self, f.name) for f in fields(self)}

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def with_overrides(self, overrides: dict[str, object]) -> "Config":
        """Apply {dotted key: raw value} overrides; string values are coerced."""
        updates = {}
        for key, raw in overrides.items():
            field_name = _FIELD_MAP.get(key)
            if field_name is None:
                raise ParseError(f"unknown config key '{key}'")
            updates[field_name] = _coerce(field_name, raw)
        return replace(self, **updates)


def _coerce(field_name: str, raw):
    default = getattr(Config, field_name)
    if not isinstance(raw, str):
        return type(default)(raw) if not isinstance(default, bool) else bool(raw)
    text = raw.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ParseError(f"cannot parse boolean '{text}' for key '{_KEY_MAP[field_name]}'")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError as exc:
            raise ParseError(f"cannot parse integer '{text}' for key '{_KEY_MAP[field_name]}'") from exc
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError as exc:
            raise ParseError(f"cannot parse float '{text}' for key '{_KEY_MAP[field_name]}'") from exc
    return text


def parse_config_text(text: str, base: Config | None = None) -> Config:
    overrides: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"line {lineno}: expected key=value, got '{stripped}'")
        key, _, value = stripped.partition("=")
        overrides[key.strip()] = value.strip()
    return (base or Config()).with_overrides(overrides)


def load_config(path, base: Config | None = None) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config file {path}: {exc}") from exc
    try:
        return parse_config_text(text, base=base)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def config_from_dict(values: dict) -> Config:
    return Config().with_overrides(values)
