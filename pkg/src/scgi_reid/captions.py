"""Caption side of the bimodal training set.

A fixed sentence template is instantiated from categorical person
attributes, mirroring how an instruction-following captioner would describe
a pedestrian (age, clothing, shoes, carried item, hair, glasses). Captions
for real datasets can instead be ingested from a tab-separated file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, ValidationError

# Field order is load-bearing: it fixes manifest columns and corruption order.
ATTRIBUTE_DOMAINS: dict[str, tuple[str, ...]] = {
    "age_band": ("young", "adult", "elderly"),
    "gender": ("man", "woman"),
    "upper_clothes": ("red shirt", "blue shirt", "green jacket",
                      "black coat", "white sweater", "yellow hoodie"),
    "lower_clothes": ("blue jeans", "black pants", "gray shorts",
                      "brown trousers", "green skirt", "white slacks"),
    "shoes": ("sneakers", "boots", "sandals", "loafers"),
    "carried_item": ("backpack", "handbag", "suitcase", "umbrella"),
    "hair_length": ("short", "long"),
    "glasses": ("glasses", "none"),
}

ATTRIBUTE_FIELDS = tuple(ATTRIBUTE_DOMAINS)

PLAIN_PROMPT = "a photo of a person"
PSEUDO_PROMPT_PREFIX = "a photo of a"
PSEUDO_PROMPT_SUFFIX = "person"

_TEMPLATE_WORDS = (
    "a", "is", "wearing", "and", "the", "carrying", "has", "hair",
    "photo", "of", "person",
)


@dataclass(frozen=True)
class AttributeRecord:
    """One categorical value per appearance attribute."""

    age_band: str
    gender: str
    upper_clothes: str
    lower_clothes: str
    shoes: str
    carried_item: str
    hair_length: str
    glasses: str

    def __post_init__(self):
        for name, domain in ATTRIBUTE_DOMAINS.items():
            value = getattr(self, name)
            if value not in domain:
                raise ValidationError(f"attribute {name}='{value}' not in domain {domain}")

    def values(self) -> tuple[str, ...]:
        return tuple(getattr(self, name) for name in ATTRIBUTE_FIELDS)


def render_caption(attrs: AttributeRecord) -> str:
    """Deterministically instantiate the fixed caption template."""
    glasses_clause = " and is wearing glasses" if attrs.glasses == "glasses" else ""
    return (
        f"A {attrs.age_band} {attrs.gender} is wearing {attrs.upper_clothes} "
        f"and {attrs.lower_clothes}. "
        f"The {attrs.gender} is wearing {attrs.shoes} and carrying a {attrs.carried_item}. "
        f"The {attrs.gender} has {attrs.hair_length} hair{glasses_clause}."
    )


def corrupt_attributes(attrs: AttributeRecord, p: float, rng: np.random.Generator) -> AttributeRecord:
    """Resample each field uniformly from its domain with probability ``p``.

    A resample may redraw the original value, so the per-field survival
    probability is at least ``1 - p``.
    """
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"corruption probability must lie in [0, 1], got {p}")
    values = {}
    for name in ATTRIBUTE_FIELDS:
        domain = ATTRIBUTE_DOMAINS[name]
        if rng.random() < p:
            values[name] = domain[int(rng.integers(len(domain)))]
        else:
            values[name] = getattr(attrs, name)
    return AttributeRecord(**values)


def random_attributes(rng: np.random.Generator) -> AttributeRecord:
    return AttributeRecord(**{
        name: domain[int(rng.integers(len(domain)))]
        for name, domain in ATTRIBUTE_DOMAINS.items()
    })


def distinct_attribute_records(count: int, rng: np.random.Generator) -> list[AttributeRecord]:
    """Draw ``count`` distinct attribute combinations, uniformly without replacement."""
    sizes = tuple(len(d) for d in ATTRIBUTE_DOMAINS.values())
    total = int(np.prod(sizes))
    if count > total:
        raise ContractError(f"cannot draw {count} distinct records from {total} combinations")
    picks = rng.choice(total, size=count, replace=False)
    records = []
    for flat in picks:
        coords = np.unravel_index(int(flat), sizes)
        records.append(AttributeRecord(**{
            name: ATTRIBUTE_DOMAINS[name][c]
            for name, c in zip(ATTRIBUTE_FIELDS, coords)
        }))
    return records


def caption_vocabulary_words() -> list[str]:
    """Every lowercase word that can appear in a rendered caption or prompt."""
    words = set(_TEMPLATE_WORDS)
    for domain in ATTRIBUTE_DOMAINS.values():
        for value in domain:
            words.update(value.split())
    words.discard("none")  # the no-glasses value never reaches a caption
    return sorted(words)


# -- caption record file ----------------------------------------------------------


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    identity_id: int
    camera_id: int
    caption: str


def save_caption_file(path, records: list[CaptionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.image_id}\t{rec.identity_id}\t{rec.camera_id}\t{rec.caption}\n")


def load_caption_file(path) -> list[CaptionRecord]:
    """Parse a caption file, validating field counts and image_id uniqueness."""
    records: list[CaptionRecord] = []
    seen: set[str] = set()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(f"{path}: line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        image_id, identity_raw, camera_raw, caption = parts
        try:
            identity_id = int(identity_raw)
            camera_id = int(camera_raw)
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: non-integer id field") from exc
        if not caption:
            raise ValidationError(f"{path}: line {lineno}: empty caption for image '{image_id}'")
        if image_id in seen:
            raise ValidationError(f"{path}: duplicate image_id '{image_id}'")
        seen.add(image_id)
        records.append(CaptionRecord(image_id, identity_id, camera_id, caption))
    return records


# -- attribute-domain manifest -----------------------------------------------------


def save_domain_manifest(path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, domain in ATTRIBUTE_DOMAINS.items():
            fh.write(name + "\t" + "\t".join(domain) + "\n")


def load_domain_manifest(path) -> dict[str, tuple[str, ...]]:
    domains: dict[str, tuple[str, ...]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ParseError(f"{path}: line {lineno}: expected field name plus values")
        domains[parts[0]] = tuple(parts[1:])
    return domains
