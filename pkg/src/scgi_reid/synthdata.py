"""Procedural person-image benchmark with attribute-driven pixels.

Each identity owns a distinct attribute record. Images are painted as
attribute-keyed color blocks in body regions (head band, torso, legs, feet,
bag patch), then perturbed by per-sample Gaussian noise and a per-camera
affine gain/bias. Captions rendered from the same attributes therefore carry
genuine discriminative signal about the pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .captions import (
    ATTRIBUTE_DOMAINS,
    ATTRIBUTE_FIELDS,
    AttributeRecord,
    CaptionRecord,
    distinct_attribute_records,
    load_caption_file,
    render_caption,
    save_caption_file,
    save_domain_manifest,
)
from .encoders import Vocabulary, build_default_vocabulary, tokenize
from .errors import ContractError, ParseError, ValidationError
from .nn import load_container, save_container

IMAGE_SHAPE = (3, 32, 16)
DEFAULT_NOISE_SIGMA = 0.1
DEFAULT_CAMERA_GAIN_RANGE = (0.7, 1.3)
DEFAULT_CAMERA_BIAS_RANGE = (-0.2, 0.2)
_SIGNATURE_SHAPE = (3, 3, 6)  # channels x rows 4:7 x cols 5:11

# Fixed color tables, one palette per attribute field (values in [0.1, 0.9]).
_PALETTES: dict[str, np.ndarray] = {}
_palette_rng = np.random.default_rng(20240601)
for _field in ATTRIBUTE_FIELDS:
    _n = len(ATTRIBUTE_DOMAINS[_field])
    _PALETTES[_field] = 0.1 + 0.8 * _palette_rng.random((_n, 3))
del _palette_rng


@dataclass
class PersonSample:
    image_id: str
    image: np.ndarray   # [3, 32, 16] float32
    identity_id: int
    camera_id: int
    caption: str
    caption_ids: np.ndarray
    attrs: AttributeRecord


@dataclass
class IdentityBatch:
    samples: list[PersonSample]
    p_ids: int
    k_per: int


def _attr_color(field: str, value: str) -> np.ndarray:
    return _PALETTES[field][ATTRIBUTE_DOMAINS[field].index(value)]


def render_base_image(attrs: AttributeRecord) -> np.ndarray:
    """Paint the noiseless attribute-keyed image for one identity."""
    img = np.zeros(IMAGE_SHAPE, dtype=np.float64)

    def paint(rows: slice, cols: slice, field: str) -> None:
        color = _attr_color(field, getattr(attrs, field))
        img[:, rows, cols] = color[:, None, None]

    paint(slice(0, 4), slice(0, 8), "hair_length")    # head band
    paint(slice(0, 4), slice(8, 12), "glasses")
    paint(slice(0, 4), slice(12, 16), "gender")
    paint(slice(4, 16), slice(0, 16), "upper_clothes")  # torso
    paint(slice(8, 16), slice(0, 4), "carried_item")    # bag patch over torso edge
    paint(slice(16, 26), slice(0, 16), "lower_clothes")  # legs
    paint(slice(26, 32), slice(0, 8), "shoes")           # feet
    paint(slice(26, 32), slice(8, 16), "age_band")
    return img


def _sample_rng(seed: int, identity: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, identity, index)))


def generate_dataset(n_ids: int, per_id: int, n_cams: int, seed: int,
                     noise_sigma: float = DEFAULT_NOISE_SIGMA,
                     camera_gain_range: tuple[float, float] = DEFAULT_CAMERA_GAIN_RANGE,
                     camera_bias_range: tuple[float, float] = DEFAULT_CAMERA_BIAS_RANGE,
                     vocab: Vocabulary | None = None,
                     max_len: int = 32,
                     attr_records: int | None = None) -> list[PersonSample]:
    """Generate the labeled bimodal dataset, deterministic per seed.

    Sample ``k`` of each identity is assigned camera ``k % n_cams``; pixels
    are ``gain_cam * (base + noise) + bias_cam``. By default every identity
    draws its own distinct attribute record; ``attr_records`` caps the number
    of distinct records so identities share appearance descriptions, which
    makes captions informative but not identity-sufficient (a benchmark
    hardening knob).
    """
    if n_ids < 2 or per_id < 2 or n_cams < 2:
        raise ContractError("need n_ids >= 2, per_id >= 2 and n_cams >= 2")
    if attr_records is not None and not 1 <= attr_records <= n_ids:
        raise ContractError(f"attr_records must lie in [1, {n_ids}], got {attr_records}")
    vocab = vocab or build_default_vocabulary()
    root_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD5)))
    distinct = distinct_attribute_records(attr_records or n_ids, root_rng)
    records = [distinct[i % len(distinct)] for i in range(n_ids)]
    gains = root_rng.uniform(*camera_gain_range, size=n_cams)
    biases = root_rng.uniform(*camera_bias_range, size=n_cams)
    # Identity texture the caption never describes; keeps identities visually
    # distinct even when they share an attribute record.
    signatures = root_rng.uniform(0.1, 0.9, size=(n_ids,) + _SIGNATURE_SHAPE)

    samples: list[PersonSample] = []
    for identity, attrs in enumerate(records):
        base = render_base_image(attrs)
        base[:, 4:7, 5:11] = signatures[identity]
        caption = render_caption(attrs)
        caption_ids = tokenize(caption, vocab, max_len)
        for k in range(per_id):
            cam = k % n_cams
            rng = _sample_rng(seed, identity, k)
            noisy = base + rng.normal(0.0, noise_sigma, size=IMAGE_SHAPE)
            image = (gains[cam] * noisy + biases[cam]).astype(np.float32)
            samples.append(PersonSample(
                image_id=f"img_{identity:04d}_{k:03d}",
                image=image,
                identity_id=identity,
                camera_id=cam,
                caption=caption,
                caption_ids=caption_ids,
                attrs=attrs,
            ))
    return samples


def dataset_camera_model(n_ids: int, n_cams: int, seed: int,
                         camera_gain_range=DEFAULT_CAMERA_GAIN_RANGE,
                         camera_bias_range=DEFAULT_CAMERA_BIAS_RANGE,
                         attr_records: int | None = None):
    """Reproduce the per-camera (gain, bias) pairs a dataset was built with."""
    root_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD5)))
    distinct_attribute_records(attr_records or n_ids, root_rng)
    gains = root_rng.uniform(*camera_gain_range, size=n_cams)
    biases = root_rng.uniform(*camera_bias_range, size=n_cams)
    return gains, biases


# -- batch sampling ----------------------------------------------------------------


def group_by_identity(samples: list[PersonSample]) -> dict[int, list[PersonSample]]:
    groups: dict[int, list[PersonSample]] = {}
    for s in samples:
        groups.setdefault(s.identity_id, []).append(s)
    return groups


def sample_pk_batch(dataset: list[PersonSample], p_ids: int, k_per: int,
                    rng: np.random.Generator) -> IdentityBatch:
    """Uniformly pick ``p_ids`` identities and ``k_per`` samples of each."""
    groups = group_by_identity(dataset)
    eligible = sorted(i for i, g in groups.items() if len(g) >= k_per)
    if len(eligible) < p_ids:
        raise ContractError(
            f"need {p_ids} identities with at least {k_per} samples, found {len(eligible)}"
        )
    chosen = rng.choice(len(eligible), size=p_ids, replace=False)
    batch: list[PersonSample] = []
    for idx in chosen:
        group = groups[eligible[int(idx)]]
        picks = rng.choice(len(group), size=k_per, replace=False)
        batch.extend(group[int(j)] for j in picks)
    return IdentityBatch(samples=batch, p_ids=p_ids, k_per=k_per)


def split_by_identity(dataset: list[PersonSample], eval_ids: int
                      ) -> tuple[list[PersonSample], list[PersonSample]]:
    """Hold out the last ``eval_ids`` identities for evaluation.

    Retrieval quality on identities never seen in training is the
    generalization measure; training identities stay for the supervised
    losses.
    """
    identities = sorted({s.identity_id for s in dataset})
    if not 0 < eval_ids < len(identities):
        raise ContractError(
            f"eval_ids must lie strictly between 0 and {len(identities)}, got {eval_ids}"
        )
    held_out = set(identities[-eval_ids:])
    train = [s for s in dataset if s.identity_id not in held_out]
    held = [s for s in dataset if s.identity_id in held_out]
    return train, held


def split_query_gallery(dataset: list[PersonSample],
                        rng: np.random.Generator) -> tuple[list[PersonSample], list[PersonSample]]:
    """Disjoint query/gallery split honoring the cross-camera protocol.

    Per identity and camera, one sample moves to the query set with
    probability one half; the split is then repaired so that every identity
    has at least one query and every query keeps at least one cross-camera
    same-identity gallery entry.
    """
    groups = group_by_identity(dataset)
    query: list[PersonSample] = []
    gallery: list[PersonSample] = []
    for identity in sorted(groups):
        members = sorted(groups[identity], key=lambda s: s.image_id)
        cams = sorted({s.camera_id for s in members})
        if len(cams) < 2:
            raise ContractError(f"identity {identity} appears under a single camera")
        picked: list[PersonSample] = []
        for cam in cams:
            cam_members = [s for s in members if s.camera_id == cam]
            if rng.random() < 0.5:
                picked.append(cam_members[int(rng.integers(len(cam_members)))])
        remaining = [s for s in members if s not in picked]

        def has_cross_match(q: PersonSample, pool: list[PersonSample]) -> bool:
            return any(g.camera_id != q.camera_id for g in pool)

        # Demote queries (last first) until each keeps a cross-camera match.
        while picked and not all(has_cross_match(q, remaining) for q in picked):
            victim = next(q for q in reversed(picked) if not has_cross_match(q, remaining))
            picked.remove(victim)
            remaining = [s for s in members if s not in picked]
        if not picked:
            # Force one query; any camera works because the others stay intact.
            cam = cams[int(rng.integers(len(cams)))]
            cam_members = [s for s in members if s.camera_id == cam]
            picked = [cam_members[int(rng.integers(len(cam_members)))]]
            remaining = [s for s in members if s not in picked]
        query.extend(picked)
        gallery.extend(remaining)
    return query, gallery


# -- train-time augmentation ---------------------------------------------------------


def augment_images(images: np.ndarray, rng: np.random.Generator,
                   flip: bool, erasing: bool) -> np.ndarray:
    """Horizontal flip and random erasing, each applied per sample with p=0.5."""
    out = images.copy()
    for i in range(out.shape[0]):
        if flip and rng.random() < 0.5:
            out[i] = out[i, :, :, ::-1]
        if erasing and rng.random() < 0.5:
            _, h, w = out[i].shape
            eh = int(rng.integers(h // 8, h // 3 + 1))
            ew = int(rng.integers(w // 8, w // 3 + 1))
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            out[i, :, top:top + eh, left:left + ew] = rng.random((out.shape[1], eh, ew))
    return out


# -- dataset directory IO -------------------------------------------------------------

MANIFEST_NAME = "manifest.tsv"
CAPTIONS_NAME = "captions.tsv"
IMAGES_NAME = "images.bin"
VOCAB_NAME = "vocab.txt"
DOMAINS_NAME = "domains.txt"


def save_dataset(directory, samples: list[PersonSample], vocab: Vocabulary) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        for s in samples:
            attrs = "\t".join(s.attrs.values())
            fh.write(f"{s.image_id}\t{s.identity_id}\t{s.camera_id}\t{attrs}\n")
    save_caption_file(directory / CAPTIONS_NAME, [
        CaptionRecord(s.image_id, s.identity_id, s.camera_id, s.caption) for s in samples
    ])
    save_container(directory / IMAGES_NAME, {s.image_id: s.image for s in samples},
                   meta={"kind": "image-set", "count": len(samples)})
    vocab.save(directory / VOCAB_NAME)
    save_domain_manifest(directory / DOMAINS_NAME)


def load_manifest(path) -> list[tuple[str, int, int, AttributeRecord]]:
    rows = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 + len(ATTRIBUTE_FIELDS):
            raise ParseError(f"{path}: line {lineno}: expected {3 + len(ATTRIBUTE_FIELDS)} fields")
        image_id, identity_raw, camera_raw = parts[:3]
        try:
            identity_id, camera_id = int(identity_raw), int(camera_raw)
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: non-integer id field") from exc
        attrs = AttributeRecord(**dict(zip(ATTRIBUTE_FIELDS, parts[3:])))
        rows.append((image_id, identity_id, camera_id, attrs))
    return rows


def load_dataset(directory, captions_path=None, max_len: int = 32
                 ) -> tuple[list[PersonSample], Vocabulary]:
    """Rebuild PersonSamples from a dataset directory.

    ``captions_path`` overrides the bundled caption file, which is how
    corrupted or externally generated captions enter training.
    """
    directory = Path(directory)
    vocab = Vocabulary.load(directory / VOCAB_NAME)
    manifest = load_manifest(directory / MANIFEST_NAME)
    images, _ = load_container(directory / IMAGES_NAME)
    caption_records = {
        r.image_id: r
        for r in load_caption_file(captions_path or directory / CAPTIONS_NAME)
    }
    samples = []
    for image_id, identity_id, camera_id, attrs in manifest:
        if image_id not in images:
            raise ValidationError(f"image '{image_id}' missing from {IMAGES_NAME}")
        if image_id not in caption_records:
            raise ValidationError(f"image '{image_id}' missing from caption file")
        caption = caption_records[image_id].caption
        samples.append(PersonSample(
            image_id=image_id,
            image=images[image_id].astype(np.float32),
            identity_id=identity_id,
            camera_id=camera_id,
            caption=caption,
            caption_ids=tokenize(caption, vocab, max_len),
            attrs=attrs,
        ))
    return samples, vocab


def with_caption(sample: PersonSample, caption: str, vocab: Vocabulary,
                 max_len: int) -> PersonSample:
    return replace(sample, caption=caption, caption_ids=tokenize(caption, vocab, max_len))
