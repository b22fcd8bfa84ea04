"""Differentiable image views and concatenated text views.

Every image operation here keeps a torch autograd path from output pixels
back to input pixels, because attack gradients must flow through the views:
crop+resize uses slicing and bilinear interpolation, rotation uses bilinear
resampling with zero padding, brightness is a multiply followed by a clamp
(subgradient 0 outside the clamp, 1 inside). Outputs preserve the input
shape and the [0, 1] pixel range.

Randomness comes exclusively from a caller-owned numpy Generator, drawn in a
fixed documented order, so view sets are reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF

from .data import TokenSeq
from .errors import InputError

CROP_RATIO_RANGE = (0.4, 0.8)
ROTATE_RANGE = (-15.0, 15.0)
BRIGHTNESS_RANGE = (0.8, 1.2)
AUGMENTATION_KINDS = ("identity", "horizontal_flip", "rotate", "brightness")


@dataclass(frozen=True)
class AugmentationOp:
    """One pixel-level view transform with its sampled parameters."""

    kind: str
    rotate_degrees: float = 0.0
    brightness_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in AUGMENTATION_KINDS:
            raise InputError(f"unknown augmentation kind {self.kind!r}")
        if not ROTATE_RANGE[0] <= self.rotate_degrees <= ROTATE_RANGE[1]:
            raise InputError(f"rotate_degrees {self.rotate_degrees} outside {ROTATE_RANGE}")
        if not BRIGHTNESS_RANGE[0] <= self.brightness_scale <= BRIGHTNESS_RANGE[1]:
            raise InputError(
                f"brightness_scale {self.brightness_scale} outside {BRIGHTNESS_RANGE}"
            )


@dataclass(frozen=True)
class CropSpec:
    """A crop window: area ratio plus its placement inside the image."""

    ratio: float
    top: int
    left: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if not CROP_RATIO_RANGE[0] <= self.ratio <= CROP_RATIO_RANGE[1]:
            raise InputError(f"crop ratio {self.ratio} outside {CROP_RATIO_RANGE}")
        if self.top < 0 or self.left < 0 or self.height < 1 or self.width < 1:
            raise InputError("crop window must be nonempty and inside the image")

    @classmethod
    def sample(
        cls, image_shape: tuple[int, int, int], ratio: float, rng: np.random.Generator
    ) -> "CropSpec":
        """Side lengths are round(sqrt(ratio) * side); offsets are uniform over
        all placements that keep the window inside the image."""
        h, w, _ = image_shape
        side = sqrt(ratio)
        ch = max(1, round(side * h))
        cw = max(1, round(side * w))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        return cls(ratio=ratio, top=top, left=left, height=ch, width=cw)


def _to_nchw(image: torch.Tensor) -> torch.Tensor:
    return image.permute(2, 0, 1).unsqueeze(0)


def _from_nchw(batch: torch.Tensor) -> torch.Tensor:
    return batch.squeeze(0).permute(1, 2, 0)


def crop_resize(image: torch.Tensor, spec: CropSpec) -> torch.Tensor:
    """Crop the window then bilinearly resize back to the input shape."""
    h, w, _ = image.shape
    if spec.top + spec.height > h or spec.left + spec.width > w:
        raise InputError("crop window extends past the image boundary")
    window = image[spec.top : spec.top + spec.height, spec.left : spec.left + spec.width, :]
    resized = F.interpolate(
        _to_nchw(window), size=(h, w), mode="bilinear", align_corners=True
    )
    return _from_nchw(resized)


def sample_crop_resize(
    image: torch.Tensor, ratio: float, rng: np.random.Generator
) -> torch.Tensor:
    """Random crop at the given area ratio, resized back to the input shape."""
    spec = CropSpec.sample(tuple(image.shape), ratio, rng)
    return crop_resize(image, spec)


def apply_augmentation(image: torch.Tensor, op: AugmentationOp) -> torch.Tensor:
    """Apply one view transform; identity returns the input tensor unchanged."""
    if op.kind == "identity":
        return image
    if op.kind == "horizontal_flip":
        return torch.flip(image, dims=[1])
    if op.kind == "rotate":
        rotated = TF.rotate(
            _to_nchw(image),
            angle=op.rotate_degrees,
            interpolation=TF.InterpolationMode.BILINEAR,
            fill=[0.0],
        )
        return _from_nchw(rotated)
    # brightness: multiply then clamp back into the pixel range
    return torch.clamp(image * op.brightness_scale, 0.0, 1.0)


def sample_augmentation_op(rng: np.random.Generator) -> AugmentationOp:
    """Uniform over kinds; parameters uniform within their ranges."""
    kind = AUGMENTATION_KINDS[int(rng.integers(0, len(AUGMENTATION_KINDS)))]
    if kind == "rotate":
        return AugmentationOp(kind=kind, rotate_degrees=float(rng.uniform(*ROTATE_RANGE)))
    if kind == "brightness":
        return AugmentationOp(kind=kind, brightness_scale=float(rng.uniform(*BRIGHTNESS_RANGE)))
    return AugmentationOp(kind=kind)


def augment_image_local(
    image: torch.Tensor, num_views: int, rng: np.random.Generator
) -> list[torch.Tensor]:
    """Draw ``num_views`` independent crop-resize-transform views of one image.

    Per view the draw order is: crop ratio, crop offsets, op kind, op
    parameter. Each view has the input's shape and carries gradients back to
    the input pixels.
    """
    if num_views < 1:
        raise InputError("num_views must be >= 1")
    views = []
    for _ in range(num_views):
        ratio = float(rng.uniform(*CROP_RATIO_RANGE))
        cropped = sample_crop_resize(image, ratio, rng)
        op = sample_augmentation_op(rng)
        views.append(apply_augmentation(cropped, op))
    return views


def augment_text_mixed(
    texts: list[TokenSeq], num_views: int, rng: np.random.Generator
) -> list[TokenSeq]:
    """Draw ``num_views`` concatenations of two distinct captions.

    The pair is drawn without replacement within a view (the two members
    always differ) and with replacement across views.
    """
    if len(texts) < 2:
        raise InputError("augment_text_mixed requires at least two texts")
    if num_views < 1:
        raise InputError("num_views must be >= 1")
    out = []
    for _ in range(num_views):
        i, j = (int(x) for x in rng.choice(len(texts), size=2, replace=False))
        out.append(
            TokenSeq(
                tokens=texts[i].tokens + texts[j].tokens,
                source_string=f"{texts[i].source_string} {texts[j].source_string}",
            )
        )
    return out
