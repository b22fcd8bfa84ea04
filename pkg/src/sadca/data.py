"""Datasets: tokenized captions, paired samples, and JSONL manifest ingestion.

Manifest format is JSONL with one object per line:
``{"id": str, "image": relative PNG path, "captions": [str, ...]}``.
A candidate lexicon is a separate JSON object mapping word -> list of
substitute words; without one the text attack is disabled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InputError, ManifestError

UNK_TOKEN = "<unk>"
UNK_ID = 0


def validate_image(pixels: torch.Tensor) -> torch.Tensor:
    """Check the (H, W, C) float64 pixel contract; returns the tensor."""
    if pixels.dim() != 3:
        raise InputError(f"image must be (H, W, C), got shape {tuple(pixels.shape)}")
    if pixels.dtype != torch.float64:
        raise InputError(f"image must be float64, got {pixels.dtype}")
    if pixels.numel() == 0:
        raise InputError("image has no pixels")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise InputError("image pixels must lie in [0, 1]")
    return pixels


@dataclass(frozen=True)
class TokenSeq:
    """An immutable tokenized caption plus the string it came from."""

    tokens: tuple[int, ...]
    source_string: str

    def __post_init__(self) -> None:
        if len(self.tokens) == 0:
            raise InputError("token sequence must be nonempty")


@dataclass(frozen=True)
class Vocabulary:
    """Word <-> id maps. Id 0 is reserved for unknown words."""

    words: tuple[str, ...]  # words[0] == UNK_TOKEN

    @classmethod
    def build(cls, words) -> "Vocabulary":
        uniq = sorted({w.lower() for w in words if w.lower() != UNK_TOKEN})
        return cls(words=(UNK_TOKEN, *uniq))

    def __len__(self) -> int:
        return len(self.words)

    @property
    def word_to_id(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word.lower(), UNK_ID)

    def tokenize(self, text: str) -> TokenSeq:
        """Lowercase whitespace tokenization; unknown words map to the UNK id."""
        parts = text.lower().split()
        if not parts:
            raise InputError(f"caption has no tokens: {text!r}")
        return TokenSeq(tokens=tuple(self.id_of(w) for w in parts), source_string=text)


@dataclass(frozen=True)
class PairedSample:
    """One image with its M ground-truth captions."""

    id: str
    image: torch.Tensor
    captions: tuple[TokenSeq, ...]

    def __post_init__(self) -> None:
        validate_image(self.image)
        if len(self.captions) < 1:
            raise InputError(f"sample {self.id!r} has no captions")
        seen = {c.tokens for c in self.captions}
        if len(seen) != len(self.captions):
            raise InputError(f"sample {self.id!r} has duplicate captions")


@dataclass(frozen=True)
class Dataset:
    """Paired samples plus the vocabulary and substitution lexicon they share."""

    samples: tuple[PairedSample, ...]
    vocab: Vocabulary
    candidate_lexicon: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise InputError("sample ids must be unique")

    def __len__(self) -> int:
        return len(self.samples)

    def by_id(self, sample_id: str) -> PairedSample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise InputError(f"no sample with id {sample_id!r}")


def load_image_png(path: Path | str) -> torch.Tensor:
    """Load an 8-bit PNG as (H, W, C) float64 pixels in [0, 1] via x/255."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(arr)


def save_image_png(pixels: torch.Tensor, path: Path | str) -> None:
    """Quantize [0, 1] float pixels to 8-bit and write a PNG."""
    validate_image(pixels)
    arr = np.rint(pixels.detach().numpy() * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        im = Image.fromarray(arr[:, :, 0], mode="L")
    elif arr.shape[2] == 3:
        im = Image.fromarray(arr, mode="RGB")
    else:
        raise InputError(f"cannot save image with {arr.shape[2]} channels as PNG")
    im.save(path)


def load_lexicon(path: Path | str) -> dict[str, tuple[str, ...]]:
    """Load a word -> substitutes JSON object."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid lexicon JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: lexicon must be a JSON object")
    lexicon: dict[str, tuple[str, ...]] = {}
    for word, subs in raw.items():
        if not isinstance(subs, list) or not all(isinstance(s, str) for s in subs):
            raise ManifestError(f"{path}: lexicon entry {word!r} must map to a list of words")
        lexicon[word.lower()] = tuple(s.lower() for s in subs)
    return lexicon


def load_manifest(
    path: Path | str,
    lexicon_path: Path | str | None = None,
    vocab: Vocabulary | None = None,
) -> Dataset:
    """Load a JSONL manifest into a Dataset.

    Image paths are resolved relative to the manifest file. When ``vocab`` is
    None a vocabulary is built from all caption and lexicon words; with an
    explicit vocabulary, unknown caption words map to the UNK id.
    """
    path = Path(path)
    lexicon = load_lexicon(lexicon_path) if lexicon_path is not None else {}

    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for key in ("id", "image", "captions"):
                if key not in obj:
                    raise ManifestError(f"{path}:{lineno}: missing field {key!r}")
            if not isinstance(obj["captions"], list) or not obj["captions"]:
                raise ManifestError(f"{path}:{lineno}: captions must be a nonempty list")
            records.append((lineno, obj))

    if vocab is None:
        words: list[str] = []
        for _, obj in records:
            for cap in obj["captions"]:
                words.extend(cap.lower().split())
        for word, subs in lexicon.items():
            words.append(word)
            words.extend(subs)
        vocab = Vocabulary.build(words)

    samples = []
    for lineno, obj in records:
        img_path = path.parent / obj["image"]
        if not img_path.is_file():
            raise FileNotFoundError(f"{path}:{lineno}: image file not found: {img_path}")
        image = load_image_png(img_path)
        captions = tuple(vocab.tokenize(c) for c in obj["captions"])
        samples.append(PairedSample(id=str(obj["id"]), image=image, captions=captions))

    return Dataset(samples=tuple(samples), vocab=vocab, candidate_lexicon=lexicon)


def render_tokens(vocab: Vocabulary, tokens: tuple[int, ...]) -> str:
    """Inverse of tokenize up to unknown words, used to persist adversarial captions."""
    return " ".join(vocab.words[t] if 0 <= t < len(vocab) else UNK_TOKEN for t in tokens)
