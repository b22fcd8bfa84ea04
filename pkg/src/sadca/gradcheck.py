"""Finite-difference verification of the analytic pixel gradients.

Each case compares image_loss_gradient against central differences on a
sample of pixel coordinates. Test images are kept away from the [0, 1]
boundary so clamp kinks cannot land on a probed point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .augment import (
    AugmentationOp,
    CropSpec,
    apply_augmentation,
    augment_image_local,
    crop_resize,
)
from .data import TokenSeq
from .encoders import EncoderParams, encode_images, encode_texts, image_loss_gradient, init_toy_encoders
from .losses import contrastive_image_loss, dynamic_image_loss, view_averaged_loss

FD_STEP = 1e-4
REL_FLOOR = 1e-9


@dataclass(frozen=True)
class GradCheckCase:
    name: str
    num_coords: int
    agree_fraction: float
    rel_tol: float
    required_fraction: float

    @property
    def ok(self) -> bool:
        return self.agree_fraction >= self.required_fraction


def central_difference(
    loss_fn: Callable[[list[torch.Tensor]], torch.Tensor],
    images: Sequence[torch.Tensor],
    image_index: int,
    flat_index: int,
    h: float = FD_STEP,
) -> float:
    """(f(x+h) - f(x-h)) / 2h along one pixel coordinate."""

    def evaluate(offset: float) -> float:
        copies = [im.detach().clone() for im in images]
        copies[image_index].reshape(-1)[flat_index] += offset
        return float(loss_fn(copies))

    return (evaluate(+h) - evaluate(-h)) / (2.0 * h)


def compare_gradients(
    params: EncoderParams,
    loss_fn: Callable[[list[torch.Tensor]], torch.Tensor],
    images: Sequence[torch.Tensor],
    num_coords: int,
    rng: np.random.Generator,
    rel_tol: float,
    h: float = FD_STEP,
) -> float:
    """Fraction of sampled coordinates where analytic and FD gradients agree."""
    analytic = image_loss_gradient(params, loss_fn, images)
    agree = 0
    for _ in range(num_coords):
        img_idx = int(rng.integers(0, len(images)))
        flat_idx = int(rng.integers(0, images[img_idx].numel()))
        fd = central_difference(loss_fn, images, img_idx, flat_idx, h=h)
        an = float(analytic[img_idx].reshape(-1)[flat_idx])
        if abs(an - fd) <= rel_tol * max(abs(fd), REL_FLOOR):
            agree += 1
    return agree / num_coords


def run_suite(seed: int = 0) -> list[GradCheckCase]:
    """Run every gradient check case on 8x8x1 toy images."""
    rng = np.random.default_rng(seed)
    shape = (8, 8, 1)
    params = init_toy_encoders(seed=seed + 1, image_shape=shape, vocab_size=24,
                               hidden=12, embed_dim=8)
    image = torch.from_numpy(rng.uniform(0.25, 0.75, size=shape))
    fixed_text = TokenSeq(tokens=(1, 5, 9), source_string="fixture caption words")
    fixed_emb = encode_texts(params, [fixed_text]).detach()
    pos_embs = encode_texts(
        params,
        [fixed_text, TokenSeq(tokens=(2, 7), source_string="more fixture words")],
    ).detach()
    neg_embs = encode_texts(
        params,
        [TokenSeq(tokens=(3,), source_string="neg"),
         TokenSeq(tokens=(11, 4), source_string="neg two")],
    ).detach()
    adv_text_embs = encode_texts(
        params, [TokenSeq(tokens=(6, 8, 2), source_string="adv fixture")]
    ).detach()

    cases: list[GradCheckCase] = []

    def add_case(name, loss_fn, num_coords, rel_tol, required=0.95,
                 case_images=None) -> None:
        case_rng = np.random.default_rng([seed, len(cases)])
        frac = compare_gradients(
            params, loss_fn, case_images or [image], num_coords, case_rng, rel_tol
        )
        cases.append(GradCheckCase(
            name=name, num_coords=num_coords, agree_fraction=frac,
            rel_tol=rel_tol, required_fraction=required,
        ))

    def encoder_cosine(leaves: list[torch.Tensor]) -> torch.Tensor:
        emb = encode_images(params, [leaves[0]])[0]
        return emb @ fixed_emb[0]

    add_case("encoder_cosine", encoder_cosine, num_coords=20, rel_tol=1e-4)

    view_seed = seed + 101

    def contrastive_views(leaves: list[torch.Tensor]) -> torch.Tensor:
        # Re-seeding per call makes the loss a deterministic function of pixels.
        view_rng = np.random.default_rng(view_seed)
        views = augment_image_local(leaves[0], 3, view_rng)
        embs = list(encode_images(params, views))
        static = view_averaged_loss(
            embs, lambda e: contrastive_image_loss(e, pos_embs, list(neg_embs), 0.2)
        )
        dynamic = view_averaged_loss(
            embs, lambda e: dynamic_image_loss(e, adv_text_embs, list(neg_embs), 0.2)
        )
        return static + dynamic

    add_case("contrastive_views_s3", contrastive_views, num_coords=50, rel_tol=1e-3)

    crop = CropSpec(ratio=0.6, top=1, left=0, height=6, width=6)

    def crop_loss(leaves: list[torch.Tensor]) -> torch.Tensor:
        emb = encode_images(params, [crop_resize(leaves[0], crop)])[0]
        return emb @ fixed_emb[0]

    add_case("crop_resize", crop_loss, num_coords=30, rel_tol=1e-3)

    for op in (
        AugmentationOp(kind="horizontal_flip"),
        AugmentationOp(kind="rotate", rotate_degrees=9.5),
        AugmentationOp(kind="brightness", brightness_scale=1.1),
    ):
        def op_loss(leaves: list[torch.Tensor], _op=op) -> torch.Tensor:
            emb = encode_images(params, [apply_augmentation(leaves[0], _op)])[0]
            return emb @ fixed_emb[0]

        add_case(f"op_{op.kind}", op_loss, num_coords=25, rel_tol=1e-3)

    return cases


def suite_passed(cases: list[GradCheckCase]) -> bool:
    return all(c.ok for c in cases)
