"""Contrastive objectives over unit-norm embeddings.

Each loss is ``positive_term - neg_weight * negative_term`` where the
positive term pulls toward matched pairs and the negative term (sums of
cosines to mismatched samples) pushes across them. Minimizing the total
therefore repels the adversarial sample from its positives while attracting
it to the negatives. All functions are stateless and keep torch graphs
intact, so they can sit inside a pixel-gradient computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch

from .errors import InputError


@dataclass(frozen=True)
class LossBreakdown:
    """Total plus the two terms it decomposes into (total = pos - weight * neg)."""

    total: torch.Tensor
    positive_term: torch.Tensor
    negative_term: torch.Tensor
    neg_weight: float


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of two unit-norm embeddings, i.e. their dot product."""
    return (a * b).sum()


def _sum_cosines(anchor: torch.Tensor, others: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum of dot products of ``anchor`` with each row; accepts a list or a (K, d) tensor."""
    if len(others) == 0:
        return torch.zeros((), dtype=anchor.dtype)
    stacked = others if isinstance(others, torch.Tensor) else torch.stack(list(others))
    return (stacked @ anchor).sum()


def _breakdown(pos: torch.Tensor, neg: torch.Tensor, neg_weight: float) -> LossBreakdown:
    return LossBreakdown(
        total=pos - neg_weight * neg,
        positive_term=pos,
        negative_term=neg,
        neg_weight=neg_weight,
    )


def contrastive_image_loss(
    image_emb: torch.Tensor,
    pos_texts: Sequence[torch.Tensor],
    neg_texts: Sequence[torch.Tensor],
    neg_weight: float,
) -> LossBreakdown:
    """Adversarial-image objective against the benign caption set.

    positive_term = sum_m cos(image, pos_text_m);
    negative_term = sum_k cos(image, neg_text_k).
    """
    if len(pos_texts) == 0:
        raise InputError("contrastive_image_loss requires at least one positive text")
    pos = _sum_cosines(image_emb, pos_texts)
    neg = _sum_cosines(image_emb, neg_texts)
    return _breakdown(pos, neg, neg_weight)


def contrastive_text_loss(
    text_emb: torch.Tensor,
    pos_image: torch.Tensor,
    neg_images: Sequence[torch.Tensor],
    neg_weight: float,
) -> LossBreakdown:
    """Adversarial-text objective against the aligned positive image."""
    pos = cosine(pos_image, text_emb)
    neg = _sum_cosines(text_emb, neg_images)
    return _breakdown(pos, neg, neg_weight)


def dynamic_image_loss(
    image_emb: torch.Tensor,
    adv_texts: Sequence[torch.Tensor],
    neg_texts: Sequence[torch.Tensor],
    neg_weight: float,
) -> LossBreakdown:
    """Same arithmetic as contrastive_image_loss, with the current adversarial
    captions bound as positives; shares the code path so the two agree
    bit-for-bit on identical inputs."""
    if len(adv_texts) == 0:
        raise InputError("dynamic_image_loss requires at least one adversarial text")
    return contrastive_image_loss(image_emb, adv_texts, neg_texts, neg_weight)


def dynamic_text_loss(
    text_emb: torch.Tensor,
    adv_image: torch.Tensor,
    neg_images: Sequence[torch.Tensor],
    neg_weight: float,
) -> LossBreakdown:
    """Same arithmetic as contrastive_text_loss, with the current adversarial
    image bound as the positive."""
    return contrastive_text_loss(text_emb, adv_image, neg_images, neg_weight)


def view_averaged_loss(
    view_embs: Sequence[torch.Tensor],
    loss_per_view: Callable[[torch.Tensor], LossBreakdown],
) -> torch.Tensor:
    """Arithmetic mean of per-view loss totals.

    The mean (rather than a sum) keeps loss magnitude and gradient scale
    independent of the number of views, so the step size needs no retuning
    when the view count changes.
    """
    if len(view_embs) == 0:
        raise InputError("view_averaged_loss requires at least one view")
    totals = [loss_per_view(e).total for e in view_embs]
    return torch.stack(totals).mean()
