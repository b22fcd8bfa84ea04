"""Positive-image alignment and negative-bank construction.

The aligned positive image is produced by projected sign-gradient ascent on
the summed cosine similarity to the sample's captions, inside the same L-inf
ball the attack uses. Negative banks hold K mismatched samples selected by
one of four strategies, with their embeddings cached under the surrogate
encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import Dataset, PairedSample, TokenSeq
from .encoders import (
    EncoderParams,
    encode_image,
    encode_images,
    encode_texts,
    image_loss_gradient,
)
from .errors import InputError
from .losses import contrastive_image_loss

STRATEGIES = ("most_similar", "least_similar", "intermediate", "random")


def validate_strategy(kind: str) -> str:
    if kind not in STRATEGIES:
        raise InputError(f"unknown selection strategy {kind!r}; expected one of {STRATEGIES}")
    return kind


@dataclass(frozen=True)
class NegativeBank:
    """K mismatched samples with embeddings cached under one encoder."""

    anchor_id: str
    ids: tuple[str, ...]
    images: tuple[torch.Tensor, ...]
    texts: tuple[TokenSeq, ...]
    image_embs: torch.Tensor  # (K, d)
    text_embs: torch.Tensor  # (K, d)

    def __post_init__(self) -> None:
        k = len(self.ids)
        if not (len(self.images) == len(self.texts) == k) or self.image_embs.shape[0] != k:
            raise InputError("negative bank members and embeddings must all have length K")
        if self.anchor_id in self.ids:
            raise InputError("negative bank must not contain the anchor sample")

    def __len__(self) -> int:
        return len(self.ids)


def align_positive_image(
    image: torch.Tensor,
    captions: list[TokenSeq],
    params: EncoderParams,
    eps_v: float,
    steps: int,
    alpha: float,
) -> torch.Tensor:
    """Projected sign-gradient ascent on sum_m cos(F_I(v), F_T(t_m)).

    Starts from the benign image and stays inside B[image, eps_v] and [0, 1].
    With eps_v == 0 the ball is degenerate and the input is returned as is.
    """
    if steps < 1:
        raise InputError("alignment needs at least one step")
    if eps_v < 0 or alpha < 0:
        raise InputError("eps_v and alpha must be nonnegative")
    if eps_v == 0.0:
        return image.detach().clone()
    from .attack import project_clip  # deferred: attack imports this module

    caption_embs = encode_texts(params, captions)
    aligned = image.detach().clone()

    def ascent_target(leaves: list[torch.Tensor]) -> torch.Tensor:
        emb = encode_images(params, [leaves[0]])[0]
        return contrastive_image_loss(emb, caption_embs, [], 0.0).total

    for _ in range(steps):
        grad = image_loss_gradient(params, ascent_target, [aligned])[0]
        aligned = project_clip(aligned + alpha * torch.sign(grad), image, eps_v)
    return aligned


def build_negative_bank(
    dataset: Dataset,
    anchor: PairedSample,
    num_negatives: int,
    strategy: str,
    params: EncoderParams,
    rng: np.random.Generator,
    anchor_image: torch.Tensor | None = None,
    image_emb_cache: dict[str, torch.Tensor] | None = None,
) -> NegativeBank:
    """Select K mismatched samples from the dataset (anchor excluded).

    Similarity-based strategies rank candidates by the cosine between the
    candidate's image embedding and the anchor reference image embedding
    (``anchor_image`` when given, e.g. the aligned positive image; the
    anchor's benign image otherwise). Ties break by ascending sample id.
    ``image_emb_cache`` maps sample id to a precomputed image embedding and
    avoids re-encoding the whole pool per attack.
    """
    validate_strategy(strategy)
    pool = sorted((s for s in dataset.samples if s.id != anchor.id), key=lambda s: s.id)
    if len(pool) < num_negatives:
        raise InputError(
            f"negative pool has {len(pool)} samples but K={num_negatives} requested"
        )
    if num_negatives < 1:
        raise InputError("num_negatives must be >= 1")

    if strategy == "random":
        idx = rng.choice(len(pool), size=num_negatives, replace=False)
        chosen = [pool[int(i)] for i in idx]
    else:
        reference = anchor.image if anchor_image is None else anchor_image
        ref_emb = encode_image(params, reference)

        def emb_of(sample: PairedSample) -> torch.Tensor:
            if image_emb_cache is not None and sample.id in image_emb_cache:
                return image_emb_cache[sample.id]
            return encode_image(params, sample.image)

        scored = [(float(emb_of(s) @ ref_emb), s) for s in pool]
        ranked = [s for _, s in sorted(scored, key=lambda t: (-t[0], t[1].id))]
        if strategy == "most_similar":
            chosen = ranked[:num_negatives]
        elif strategy == "least_similar":
            chosen = ranked[-num_negatives:]
        else:  # intermediate: window of K centered on the ranked list's median
            start = (len(ranked) - num_negatives) // 2
            chosen = ranked[start : start + num_negatives]

    texts = tuple(s.captions[0] for s in chosen)
    if image_emb_cache is not None and all(s.id in image_emb_cache for s in chosen):
        image_embs = torch.stack([image_emb_cache[s.id] for s in chosen])
    else:
        image_embs = encode_images(params, [s.image for s in chosen])
    return NegativeBank(
        anchor_id=anchor.id,
        ids=tuple(s.id for s in chosen),
        images=tuple(s.image for s in chosen),
        texts=texts,
        image_embs=image_embs.detach(),
        text_embs=encode_texts(params, list(texts)).detach(),
    )
