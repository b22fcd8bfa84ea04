"""Deterministic toy dual encoders with exact pixel gradients.

Images are float64 torch tensors of shape (H, W, C) with values in [0, 1].
Embeddings are float64 torch tensors of shape (d,) with unit L2 norm, so
cosine similarity reduces to a dot product.

The vision branch is flatten -> affine -> tanh -> affine -> normalize; the
text branch is mean of token embedding rows -> affine -> tanh -> affine ->
normalize. All weights come from one seeded uniform(-0.1, 0.1) stream, so
params are a pure function of (seed, dims). The text branch is a bag of
tokens: permuting a caption's tokens does not change its embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .data import TokenSeq
from .errors import ConfigurationError, InputError, NumericalError

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class EncoderParams:
    """Weights of one toy dual encoder; immutable and safe to share."""

    image_shape: tuple[int, int, int]
    vocab_size: int
    hidden: int
    embed_dim: int
    seed: int
    img_w1: torch.Tensor  # (hidden, H*W*C)
    img_b1: torch.Tensor  # (hidden,)
    img_w2: torch.Tensor  # (d, hidden)
    img_b2: torch.Tensor  # (d,)
    txt_emb: torch.Tensor  # (vocab_size, hidden)
    txt_w1: torch.Tensor  # (hidden, hidden)
    txt_b1: torch.Tensor  # (hidden,)
    txt_w2: torch.Tensor  # (d, hidden)
    txt_b2: torch.Tensor  # (d,)

    @property
    def label(self) -> str:
        """Stable identifier used in reports."""
        return f"enc-s{self.seed}-h{self.hidden}-d{self.embed_dim}"


def init_toy_encoders(
    seed: int,
    image_shape: tuple[int, int, int],
    vocab_size: int,
    hidden: int,
    embed_dim: int,
) -> EncoderParams:
    """Draw encoder weights from a seeded uniform(-0.1, 0.1) stream.

    Weight arrays are drawn in a fixed order (image branch first, then text
    branch), so the same (seed, dims) always yields bit-identical params.
    """
    h, w, c = image_shape
    if min(h, w, c, vocab_size, hidden, embed_dim) <= 0:
        raise InputError("all encoder dimensions must be positive")
    rng = np.random.default_rng(seed)

    def draw(*shape: int) -> torch.Tensor:
        return torch.from_numpy(rng.uniform(-0.1, 0.1, size=shape))

    return EncoderParams(
        image_shape=(h, w, c),
        vocab_size=vocab_size,
        hidden=hidden,
        embed_dim=embed_dim,
        seed=seed,
        img_w1=draw(hidden, h * w * c),
        img_b1=draw(hidden),
        img_w2=draw(embed_dim, hidden),
        img_b2=draw(embed_dim),
        txt_emb=draw(vocab_size, hidden),
        txt_w1=draw(hidden, hidden),
        txt_b1=draw(hidden),
        txt_w2=draw(embed_dim, hidden),
        txt_b2=draw(embed_dim),
    )


def _normalize_rows(x: torch.Tensor) -> torch.Tensor:
    norms = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    if not torch.isfinite(norms).all() or (norms == 0).any():
        raise NumericalError("encoder produced a zero or non-finite pre-embedding")
    out = x / norms
    # Unit-norm postcondition; cheap enough to keep on in production.
    err = (torch.linalg.vector_norm(out.detach(), dim=-1) - 1.0).abs().max()
    if err > UNIT_NORM_TOL:
        raise NumericalError(f"embedding norm deviates from 1 by {err:.3e}")
    return out


def encode_images(params: EncoderParams, images: Sequence[torch.Tensor]) -> torch.Tensor:
    """Encode a batch of (H, W, C) images into unit-norm rows of shape (B, d)."""
    if len(images) == 0:
        raise InputError("empty image batch")
    for img in images:
        if tuple(img.shape) != params.image_shape:
            raise ConfigurationError(
                f"image shape {tuple(img.shape)} does not match encoder shape {params.image_shape}"
            )
    flat = torch.stack([img.reshape(-1) for img in images])
    h1 = torch.tanh(flat @ params.img_w1.T + params.img_b1)
    out = h1 @ params.img_w2.T + params.img_b2
    return _normalize_rows(out)


def encode_image(params: EncoderParams, image: torch.Tensor) -> torch.Tensor:
    """Encode one image; pure function of (params, image)."""
    return encode_images(params, [image])[0]


def encode_texts(params: EncoderParams, texts: Sequence[TokenSeq]) -> torch.Tensor:
    """Encode a batch of token sequences into unit-norm rows of shape (B, d)."""
    if len(texts) == 0:
        raise InputError("empty text batch")
    means = []
    for t in texts:
        ids = t.tokens
        if len(ids) == 0:
            raise InputError("cannot encode an empty token sequence")
        if max(ids) >= params.vocab_size or min(ids) < 0:
            raise InputError(
                f"token id out of range for vocab size {params.vocab_size}: {ids}"
            )
        means.append(params.txt_emb[list(ids)].mean(dim=0))
    feats = torch.stack(means)
    h1 = torch.tanh(feats @ params.txt_w1.T + params.txt_b1)
    out = h1 @ params.txt_w2.T + params.txt_b2
    return _normalize_rows(out)


def encode_text(params: EncoderParams, text: TokenSeq) -> torch.Tensor:
    """Encode one token sequence; permutation of tokens yields the same embedding."""
    return encode_texts(params, [text])[0]


def image_loss_gradient(
    params: EncoderParams,
    loss_fn: Callable[[list[torch.Tensor]], torch.Tensor],
    images: Sequence[torch.Tensor],
) -> list[torch.Tensor]:
    """Exact gradients of a scalar loss with respect to every input pixel.

    ``loss_fn`` receives a list of leaf pixel tensors (same shapes as
    ``images``) and must return a scalar composed of operations from this
    package (encoders, augmentations, losses); gradients flow through any
    differentiable augmentation applied inside it.
    """
    for img in images:
        if tuple(img.shape) != params.image_shape:
            raise ConfigurationError(
                f"image shape {tuple(img.shape)} does not match encoder shape {params.image_shape}"
            )
    leaves = [img.detach().clone().requires_grad_(True) for img in images]
    value = loss_fn(list(leaves))
    if value.dim() != 0:
        raise InputError("loss_fn must return a scalar")
    grads = torch.autograd.grad(value, leaves, allow_unused=True)
    out = []
    for leaf, g in zip(leaves, grads):
        g = torch.zeros_like(leaf) if g is None else g.detach()
        if not torch.isfinite(g).all():
            raise NumericalError("non-finite pixel gradient")
        out.append(g)
    return out
