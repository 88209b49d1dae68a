"""Dataset construction: tokenization, vocabulary, score labeling, synthetic data.

On-disk layout of a dataset directory:

- ``manifest.jsonl``: one object per example with keys id, score, label
  ("low"/"high"), split ("train"/"valid"/"test"), comments (raw strings).
- ``features.bin``: magic ``NAIRF1``, u32 count, u32 dim, then count*dim
  little-endian float64 values in manifest order. Image datasets carry
  ``images.bin`` instead: magic ``NAIRI1``, u32 count, u32 dims 3, 32, 32,
  float64 payload in [0, 1]. Exactly one of the two files is present.
- ``vocab.txt``: one token per line, the line number is the id, the first
  four lines are the reserved specials.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<PAD>", "<START>", "<END>", "<UNK>")

FEATURES_MAGIC = b"NAIRF1"
IMAGES_MAGIC = b"NAIRI1"
IMAGE_SHAPE = (3, 32, 32)

SPLITS = ("train", "valid", "test")

_PUNCT = ".,!?;:'\"()"


class Label(IntEnum):
    LOW = 0
    HIGH = 1


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and detach basic punctuation marks."""
    text = text.lower()
    for ch in _PUNCT:
        text = text.replace(ch, f" {ch} ")
    return text.split()


@dataclass(frozen=True)
class LabelRule:
    """Scores within ``pivot +/- delta`` are ambiguous and get discarded."""

    delta: float = 0.5
    pivot: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.delta < 4.0:
            raise ConfigError(f"delta must be in [0, 4), got {self.delta}")


def label_from_score(score: float, rule: LabelRule = LabelRule()) -> Label | None:
    """Low below pivot-delta, High at or above pivot+delta, None in between."""
    score = float(score)
    if not 1.0 <= score <= 10.0:
        raise ValueError(f"score {score} outside the valid range [1, 10]")
    if score < rule.pivot - rule.delta:
        return Label.LOW
    if score >= rule.pivot + rule.delta:
        return Label.HIGH
    return None


class Vocabulary:
    """Token/id bijection with the four reserved specials pinned at ids 0..3.

    Non-reserved ids are assigned by descending corpus count with ties broken
    lexicographically, so the numbering is stable across runs.
    """

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise DataError(f"vocabulary must start with the reserved specials {RESERVED_TOKENS}")
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise DataError(f"vocabulary file not found: {path}")
        tokens = path.read_text(encoding="utf-8").splitlines()
        return cls(tokens)


def build_vocab(corpus: list[list[str]], min_count: int = 4) -> Vocabulary:
    """Keep exactly the tokens appearing at least ``min_count`` times."""
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED_TOKENS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED_TOKENS) + kept)


def encode_caption(tokens: list[str], vocab: Vocabulary) -> list[int]:
    """Token ids for a caption; START/END are added downstream, never stored."""
    return vocab.encode(tokens)


@dataclass
class ReviewExample:
    example_id: str
    score: float
    label: Label
    split: str
    comments: list[str]
    features: np.ndarray | None = None
    image: np.ndarray | None = None

    def inputs(self) -> np.ndarray:
        return self.features if self.features is not None else self.image


@dataclass
class ReviewDataset:
    examples: list[ReviewExample]
    modality: str  # "features" or "images"
    vocab: Vocabulary | None = None

    def split(self, name: str) -> list[ReviewExample]:
        if name == "all":
            return list(self.examples)
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}; expected one of {SPLITS} or 'all'")
        return [ex for ex in self.examples if ex.split == name]

    @property
    def feature_dim(self) -> int:
        if self.modality != "features":
            raise ConfigError("feature_dim is only defined for feature datasets")
        return self.examples[0].features.shape[0]


# ---------------------------------------------------------------------------
# synthetic generator

HIGH_TEMPLATES = (
    "great colors and sharp focus .",
    "wonderful composition and lovely lighting .",
    "fantastic detail , very sharp capture .",
    "beautiful tones with great depth .",
    "excellent focus and vivid colors .",
    "superb lighting , nicely composed shot .",
)

LOW_TEMPLATES = (
    "too blurry and very noisy .",
    "the focus is too soft here .",
    "dull colors and poor lighting .",
    "the composition is a bit off .",
    "too dark and out of focus .",
    "the image is too small .",
)

COMMENTS_PER_IMAGE = 6


def _split_sizes(per_class: int) -> tuple[int, int, int]:
    if per_class < 3:
        return per_class, 0, 0
    n_valid = max(1, round(0.1 * per_class))
    n_test = max(1, round(0.1 * per_class))
    return per_class - n_valid - n_test, n_valid, n_test


def synth_dataset(seed: int, n_images: int, *, feature_dim: int = 16,
                  feature_noise: float = 1.0, modality: str = "features",
                  templates: tuple[tuple[str, ...], tuple[str, ...]] | None = None,
                  rule: LabelRule = LabelRule()) -> ReviewDataset:
    """Deterministic class-balanced toy dataset.

    Features are class-conditional Gaussians (means at -1 and +1 per
    dimension); the per-image noise keeps classes linearly separable while
    giving each image a signature the caption decoder can latch onto. Every
    image carries six identical comments drawn round-robin from its class
    template list, and splits are roughly 80/10/10 per class.
    """
    if n_images < 2 or n_images % 2:
        raise ConfigError(f"n_images must be an even number >= 2, got {n_images}")
    if modality not in ("features", "images"):
        raise ConfigError(f"modality must be 'features' or 'images', got {modality!r}")
    if rule.pivot - rule.delta - 0.1 <= 2.0 or rule.pivot + rule.delta + 0.1 >= 9.0:
        raise ConfigError(f"delta {rule.delta} leaves no room to sample scores")
    low_templates, high_templates = templates or (LOW_TEMPLATES, HIGH_TEMPLATES)
    rng = np.random.default_rng(seed)
    per_class = n_images // 2

    examples: list[ReviewExample] = []
    class_positions: dict[Label, list[int]] = {Label.LOW: [], Label.HIGH: []}
    for k in range(n_images):
        label = Label.LOW if k % 2 == 0 else Label.HIGH
        pos = len(class_positions[label])
        class_positions[label].append(k)
        if label is Label.LOW:
            score = float(rng.uniform(2.0, rule.pivot - rule.delta - 0.1))
            template = low_templates[pos % len(low_templates)]
        else:
            score = float(rng.uniform(rule.pivot + rule.delta + 0.1, 9.0))
            template = high_templates[pos % len(high_templates)]
        sign = -1.0 if label is Label.LOW else 1.0
        ex = ReviewExample(
            example_id=f"img{k:04d}",
            score=round(score, 3),
            label=label,
            split="train",
            comments=[template] * COMMENTS_PER_IMAGE,
        )
        if modality == "features":
            ex.features = sign + rng.normal(0.0, feature_noise, size=feature_dim)
        else:
            base = 0.3 if label is Label.LOW else 0.7
            ex.image = np.clip(base + rng.normal(0.0, 0.08, size=IMAGE_SHAPE), 0.0, 1.0)
        examples.append(ex)

    for label in (Label.LOW, Label.HIGH):
        order = rng.permutation(per_class)
        n_train, n_valid, _ = _split_sizes(per_class)
        for rank, slot in enumerate(order):
            idx = class_positions[label][slot]
            if rank < n_train:
                examples[idx].split = "train"
            elif rank < n_train + n_valid:
                examples[idx].split = "valid"
            else:
                examples[idx].split = "test"

    return ReviewDataset(examples=examples, modality=modality)


# ---------------------------------------------------------------------------
# file io


def save_dataset(ds: ReviewDataset, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for ex in ds.examples:
        lines.append(json.dumps({
            "id": ex.example_id,
            "score": ex.score,
            "label": "low" if ex.label is Label.LOW else "high",
            "split": ex.split,
            "comments": ex.comments,
        }))
    (out_dir / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    # exactly one payload file may exist, so drop any leftover of the other kind
    if ds.modality == "features":
        (out_dir / "images.bin").unlink(missing_ok=True)
        payload = np.stack([ex.features for ex in ds.examples]).astype("<f8")
        count, dim = payload.shape
        blob = FEATURES_MAGIC + struct.pack("<II", count, dim) + payload.tobytes()
        (out_dir / "features.bin").write_bytes(blob)
    else:
        (out_dir / "features.bin").unlink(missing_ok=True)
        payload = np.stack([ex.image for ex in ds.examples]).astype("<f8")
        blob = IMAGES_MAGIC + struct.pack("<IIII", payload.shape[0], *IMAGE_SHAPE)
        (out_dir / "images.bin").write_bytes(blob + payload.tobytes())


def read_features_bin(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"features file not found: {path}")
    raw = path.read_bytes()
    if raw[:len(FEATURES_MAGIC)] != FEATURES_MAGIC:
        raise DataError(f"{path} does not start with the {FEATURES_MAGIC!r} magic")
    count, dim = struct.unpack_from("<II", raw, len(FEATURES_MAGIC))
    offset = len(FEATURES_MAGIC) + 8
    expected = count * dim * 8
    if len(raw) - offset != expected:
        raise DataError(f"{path}: expected {expected} payload bytes, found {len(raw) - offset}")
    return np.frombuffer(raw, dtype="<f8", offset=offset).reshape(count, dim).copy()


def read_images_bin(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"images file not found: {path}")
    raw = path.read_bytes()
    if raw[:len(IMAGES_MAGIC)] != IMAGES_MAGIC:
        raise DataError(f"{path} does not start with the {IMAGES_MAGIC!r} magic")
    count, c, h, w = struct.unpack_from("<IIII", raw, len(IMAGES_MAGIC))
    if (c, h, w) != IMAGE_SHAPE:
        raise DataError(f"{path}: unexpected image dims {(c, h, w)}")
    offset = len(IMAGES_MAGIC) + 16
    expected = count * c * h * w * 8
    if len(raw) - offset != expected:
        raise DataError(f"{path}: expected {expected} payload bytes, found {len(raw) - offset}")
    return np.frombuffer(raw, dtype="<f8", offset=offset).reshape(count, c, h, w).copy()


def load_dataset(data_dir: str | Path, rule: LabelRule = LabelRule()) -> ReviewDataset:
    data_dir = Path(data_dir)
    manifest = data_dir / "manifest.jsonl"
    if not manifest.exists():
        raise DataError(f"manifest not found: {manifest}")

    features_path = data_dir / "features.bin"
    images_path = data_dir / "images.bin"
    if features_path.exists() == images_path.exists():
        raise DataError(f"{data_dir} must contain exactly one of features.bin or images.bin")
    modality = "features" if features_path.exists() else "images"
    payload = read_features_bin(features_path) if modality == "features" else read_images_bin(images_path)

    examples: list[ReviewExample] = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest}:{lineno + 1}: invalid JSON ({exc})") from None
        try:
            label = {"low": Label.LOW, "high": Label.HIGH}[obj["label"]]
            ex = ReviewExample(
                example_id=str(obj["id"]),
                score=float(obj["score"]),
                label=label,
                split=str(obj["split"]),
                comments=[str(c) for c in obj["comments"]],
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{manifest}:{lineno + 1}: missing or malformed field ({exc})") from None
        if ex.split not in SPLITS:
            raise DataError(f"{manifest}:{lineno + 1}: unknown split {ex.split!r}")
        if label_from_score(ex.score, rule) is not ex.label:
            raise DataError(
                f"{manifest}:{lineno + 1}: label {ex.label.name} inconsistent with score {ex.score}")
        examples.append(ex)

    if len(examples) != payload.shape[0]:
        raise DataError(
            f"{data_dir}: manifest has {len(examples)} examples but the binary payload has "
            f"{payload.shape[0]} rows")
    for ex, row in zip(examples, payload):
        if modality == "features":
            ex.features = row
        else:
            ex.image = row

    vocab_path = data_dir / "vocab.txt"
    vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else None
    return ReviewDataset(examples=examples, modality=modality, vocab=vocab)
