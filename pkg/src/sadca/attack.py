"""The dynamic contrastive attack engine and a plain PGD baseline.

One attack run alternates a greedy word-substitution step on the captions
with an inner loop of momentum sign-gradient steps on the image, both driven
by contrastive losses against an aligned positive sample and a bank of
mismatched negatives. Augmented image/text views are redrawn every image
step. A single momentum stream persists across the outer interactions.

Update direction: the contrastive objectives are minimized, so image steps
descend (v - alpha * sign(g)); the alignment ascent in sampling.py is the
one place that climbs.

Determinism: each invocation owns a numpy Generator seeded from
(config.seed, sample id) and consumes it in a fixed order (negative bank
first, then per-step view draws), so results are a pure function of
(sample, dataset, config, params).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from .augment import augment_image_local, augment_text_mixed
from .data import Dataset, PairedSample, TokenSeq, Vocabulary
from .encoders import EncoderParams, encode_images, encode_texts
from .errors import ConfigurationError, InputError, NumericalError
from .losses import (
    contrastive_image_loss,
    contrastive_text_loss,
    dynamic_image_loss,
    dynamic_text_loss,
    view_averaged_loss,
)
from .sampling import align_positive_image, build_negative_bank, validate_strategy

BUDGET_SLACK = 1e-9
MAX_TEXT_CANDIDATES = 10


@dataclass(frozen=True)
class AttackConfig:
    """All scalar knobs of one attack run; JSON mirrors these field names."""

    eps_v: float = 8 / 255  # L-inf pixel budget
    eps_t: int = 1  # max substituted words per caption
    alpha: float = 2 / 255  # step size
    mu: float = 1.0  # momentum factor
    interactions: int = 5  # outer text/image interaction rounds
    image_steps: int = 10  # image steps per interaction
    num_negatives: int = 20  # bank size K
    neg_weight: float = 0.2  # weighting of the negative terms
    num_views: int = 10  # augmented views per image step
    strategy: str = "random"
    seed: int = 0
    enable_ci: bool = True  # align the positive image before attacking
    enable_di: bool = True  # re-attack the captions every interaction
    enable_sa: bool = True  # draw augmented image/text views

    def __post_init__(self) -> None:
        if not 0.0 < self.eps_v <= 1.0:
            raise ConfigurationError("eps_v must be in (0, 1]")
        if self.eps_t < 0:
            raise ConfigurationError("eps_t must be >= 0")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be > 0")
        if self.mu < 0:
            raise ConfigurationError("mu must be >= 0")
        for name in ("interactions", "image_steps", "num_negatives", "num_views"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.neg_weight < 0:
            raise ConfigurationError("neg_weight must be >= 0")
        if self.seed < 0:
            raise ConfigurationError("seed must be >= 0")
        validate_strategy(self.strategy)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path: Path | str) -> "AttackConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid config JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def with_overrides(self, **kwargs) -> "AttackConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class TraceEntry:
    """One recorded optimization step."""

    kind: str  # "image" or "text"
    interaction: int
    step: int  # image step index within the interaction; -1 for text entries
    value: float  # loss after the step
    linf: float | None = None  # image steps: current ||v' - v||_inf
    substitutions: int | None = None  # text steps: total substituted words so far

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "interaction": self.interaction, "step": self.step,
             "value": self.value}
        if self.linf is not None:
            d["linf"] = self.linf
        if self.substitutions is not None:
            d["substitutions"] = self.substitutions
        return d


@dataclass(frozen=True)
class AttackResult:
    """Adversarial outputs plus the step-by-step trace and budget flags."""

    sample_id: str
    adv_image: torch.Tensor
    adv_captions: tuple[TokenSeq, ...]
    loss_trace: tuple[TraceEntry, ...]
    budget_ok: bool
    substituted_words: tuple[int, ...]


def momentum_update(momentum: torch.Tensor, grad: torch.Tensor, mu: float) -> torch.Tensor:
    """g_new = mu * g + grad / ||grad||_1; a zero gradient contributes zero."""
    if momentum.shape != grad.shape:
        raise InputError("momentum and gradient shapes differ")
    l1 = grad.abs().sum()
    normalized = torch.zeros_like(grad) if l1 == 0 else grad / l1
    return mu * momentum + normalized


def project_clip(candidate: torch.Tensor, origin: torch.Tensor, eps_v: float) -> torch.Tensor:
    """Clamp element-wise to [origin - eps_v, origin + eps_v] and then [0, 1]."""
    if candidate.shape != origin.shape:
        raise InputError("candidate and origin shapes differ")
    bounded = torch.clamp(candidate, min=origin - eps_v, max=origin + eps_v)
    return torch.clamp(bounded, 0.0, 1.0)


def _check_budget(adv: torch.Tensor, origin: torch.Tensor, eps_v: float) -> float:
    linf = float((adv - origin).abs().max())
    if linf > eps_v + BUDGET_SLACK:
        raise NumericalError(f"budget violated: ||delta||_inf={linf} > {eps_v}")
    return linf


def image_attack_inner(
    origin: torch.Tensor,
    current: torch.Tensor,
    pos_text_embs: torch.Tensor,
    adv_texts: list[TokenSeq],
    neg_text_embs: torch.Tensor,
    config: AttackConfig,
    params: EncoderParams,
    rng: np.random.Generator,
    momentum: torch.Tensor,
    interaction: int = 0,
) -> tuple[torch.Tensor, torch.Tensor, list[TraceEntry]]:
    """Run ``config.image_steps`` momentum sign-descent steps on the image.

    Each step draws fresh image views of the current iterate and fresh
    concatenated text views of the adversarial captions (with augmentation
    off, the single view {current} and the captions themselves are used),
    then descends the sum of the view-averaged static term (against the
    benign captions) and dynamic term (against the adversarial text views).
    """
    entries: list[TraceEntry] = []
    neg_list = list(neg_text_embs) if len(neg_text_embs) else []
    for j in range(config.image_steps):
        leaf = current.detach().clone().requires_grad_(True)
        if config.enable_sa:
            views = augment_image_local(leaf, config.num_views, rng)
            if len(adv_texts) >= 2:
                text_views = augment_text_mixed(adv_texts, config.num_views, rng)
            else:
                text_views = list(adv_texts)
        else:
            views = [leaf]
            text_views = list(adv_texts)
        view_embs = list(encode_images(params, views))
        text_view_embs = list(encode_texts(params, text_views))

        static_term = view_averaged_loss(
            view_embs,
            lambda e: contrastive_image_loss(e, pos_text_embs, neg_list, config.neg_weight),
        )
        dynamic_term = view_averaged_loss(
            view_embs,
            lambda e: dynamic_image_loss(e, text_view_embs, neg_list, config.neg_weight),
        )
        loss = static_term + dynamic_term
        if not torch.isfinite(loss):
            raise NumericalError(
                f"non-finite image loss at interaction {interaction}, step {j}"
            )
        grad = torch.autograd.grad(loss, leaf)[0]
        if not torch.isfinite(grad).all():
            raise NumericalError(
                f"non-finite image gradient at interaction {interaction}, step {j}"
            )
        momentum = momentum_update(momentum, grad.detach(), config.mu)
        current = project_clip(
            current.detach() - config.alpha * torch.sign(momentum), origin, config.eps_v
        ).detach()
        linf = _check_budget(current, origin, config.eps_v)
        entries.append(
            TraceEntry(kind="image", interaction=interaction, step=j,
                       value=float(loss.detach()), linf=linf)
        )
    return current, momentum, entries


def _caption_words(caption: TokenSeq) -> list[str]:
    return caption.source_string.lower().split()


def count_substitutions(original: TokenSeq, modified: TokenSeq) -> int:
    """Positions whose word differs from the original caption."""
    ow, mw = _caption_words(original), _caption_words(modified)
    if len(ow) != len(mw):
        raise InputError("substituted caption changed length")
    return sum(1 for a, b in zip(ow, mw) if a != b)


def text_attack_step(
    captions: list[TokenSeq],
    adv_image_emb: torch.Tensor,
    pos_image_emb: torch.Tensor,
    neg_image_embs: torch.Tensor,
    lexicon: dict[str, tuple[str, ...]],
    eps_t: int,
    params: EncoderParams,
    neg_weight: float,
    vocab: Vocabulary,
    originals: list[TokenSeq] | None = None,
) -> tuple[list[TokenSeq], list[float]]:
    """Greedy word substitution minimizing the paired text objective.

    Per caption, every (position, candidate) pair from the lexicon (at most
    10 candidates per word) is scored by the sum of the dynamic term (against
    the current adversarial image) and the static term (against the aligned
    positive image), both with the negative-image bank; the single best pair
    is applied only if strictly better, until no improvement remains or the
    number of positions differing from the *original* caption reaches
    ``eps_t`` (the budget is cumulative across interactions). With an empty
    lexicon or eps_t == 0 the captions are returned verbatim.

    Returns the new captions and each caption's final objective value.
    """
    originals = list(captions) if originals is None else originals
    if len(originals) != len(captions):
        raise InputError("originals must align with captions")
    neg_list = list(neg_image_embs) if len(neg_image_embs) else []

    def objective(seq: TokenSeq) -> float:
        emb = encode_texts(params, [seq])[0]
        dyn = dynamic_text_loss(emb, adv_image_emb, neg_list, neg_weight).total
        sta = contrastive_text_loss(emb, pos_image_emb, neg_list, neg_weight).total
        return float(dyn + sta)

    out_captions: list[TokenSeq] = []
    out_losses: list[float] = []
    for caption, original in zip(captions, originals):
        current = caption
        current_loss = objective(current)
        if eps_t > 0 and lexicon:
            while count_substitutions(original, current) < eps_t:
                words = _caption_words(current)
                best: tuple[float, int, str] | None = None
                for pos, word in enumerate(words):
                    for cand in lexicon.get(word, ())[:MAX_TEXT_CANDIDATES]:
                        if cand == word:
                            continue
                        trial_words = words.copy()
                        trial_words[pos] = cand
                        trial = TokenSeq(
                            tokens=tuple(vocab.id_of(w) for w in trial_words),
                            source_string=" ".join(trial_words),
                        )
                        trial_loss = objective(trial)
                        if trial_loss < current_loss and (
                            best is None or trial_loss < best[0]
                        ):
                            best = (trial_loss, pos, cand)
                if best is None:
                    break
                _, pos, cand = best
                new_words = _caption_words(current)
                new_words[pos] = cand
                current = TokenSeq(
                    tokens=tuple(vocab.id_of(w) for w in new_words),
                    source_string=" ".join(new_words),
                )
                current_loss = best[0]
        out_captions.append(current)
        out_losses.append(current_loss)
    return out_captions, out_losses


def _sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "big")])


def sadca_attack(
    sample: PairedSample,
    dataset: Dataset,
    config: AttackConfig,
    params: EncoderParams,
    image_emb_cache: dict[str, torch.Tensor] | None = None,
) -> AttackResult:
    """Run the full dynamic contrastive attack on one sample.

    Flow: align the positive image (skipped with enable_ci off), build the
    negative bank, then for each interaction run one text substitution step
    followed by the inner image loop, with one momentum stream carried across
    interactions. With enable_di off, the captions produced at interaction 0
    are reused unchanged afterwards; the text trace entry still records the
    current objective so the trace always has interactions * image_steps +
    interactions entries.
    """
    rng = _sample_rng(config.seed, sample.id)
    origin = sample.image
    originals = list(sample.captions)

    if config.enable_ci:
        positive = align_positive_image(
            origin, originals, params, config.eps_v, config.image_steps, config.alpha
        )
    else:
        positive = origin.detach().clone()

    bank = build_negative_bank(
        dataset,
        sample,
        config.num_negatives,
        config.strategy,
        params,
        rng,
        anchor_image=positive,
        image_emb_cache=image_emb_cache,
    )

    pos_text_embs = encode_texts(params, originals).detach()
    pos_image_emb = encode_images(params, [positive])[0].detach()

    current = origin.detach().clone()
    momentum = torch.zeros_like(origin)
    adv_texts = list(originals)
    trace: list[TraceEntry] = []

    for i in range(config.interactions):
        adv_image_emb = encode_images(params, [current])[0].detach()
        if i == 0 or config.enable_di:
            adv_texts, text_losses = text_attack_step(
                adv_texts,
                adv_image_emb,
                pos_image_emb,
                bank.image_embs,
                dataset.candidate_lexicon,
                config.eps_t,
                params,
                config.neg_weight,
                dataset.vocab,
                originals=originals,
            )
        else:
            # Static variant: keep the interaction-0 captions, record their objective.
            _, text_losses = text_attack_step(
                adv_texts,
                adv_image_emb,
                pos_image_emb,
                bank.image_embs,
                {},
                0,
                params,
                config.neg_weight,
                dataset.vocab,
                originals=originals,
            )
        subs_total = sum(count_substitutions(o, c) for o, c in zip(originals, adv_texts))
        trace.append(
            TraceEntry(
                kind="text",
                interaction=i,
                step=-1,
                value=float(np.mean(text_losses)),
                substitutions=subs_total,
            )
        )
        current, momentum, image_entries = image_attack_inner(
            origin,
            current,
            pos_text_embs,
            adv_texts,
            bank.text_embs,
            config,
            params,
            rng,
            momentum,
            interaction=i,
        )
        trace.extend(image_entries)

    substituted = tuple(count_substitutions(o, c) for o, c in zip(originals, adv_texts))
    linf = float((current - origin).abs().max())
    budget_ok = (
        linf <= config.eps_v + BUDGET_SLACK
        and float(current.min()) >= 0.0
        and float(current.max()) <= 1.0
        and all(s <= config.eps_t for s in substituted)
    )
    return AttackResult(
        sample_id=sample.id,
        adv_image=current,
        adv_captions=tuple(adv_texts),
        loss_trace=tuple(trace),
        budget_ok=budget_ok,
        substituted_words=substituted,
    )


def pgd_baseline(
    sample: PairedSample, config: AttackConfig, params: EncoderParams
) -> AttackResult:
    """Image-only sign-gradient descent on the summed caption similarity.

    No momentum, no augmentation, no negatives; captions are returned
    unchanged. Runs interactions * image_steps steps so its step budget
    matches one full dynamic attack.
    """
    origin = sample.image
    captions = list(sample.captions)
    pos_text_embs = encode_texts(params, captions).detach()
    current = origin.detach().clone()
    trace: list[TraceEntry] = []
    total_steps = config.interactions * config.image_steps
    for j in range(total_steps):
        leaf = current.detach().clone().requires_grad_(True)
        emb = encode_images(params, [leaf])[0]
        loss = contrastive_image_loss(emb, pos_text_embs, [], 0.0).total
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite baseline loss at step {j}")
        grad = torch.autograd.grad(loss, leaf)[0]
        if not torch.isfinite(grad).all():
            raise NumericalError(f"non-finite baseline gradient at step {j}")
        current = project_clip(
            current.detach() - config.alpha * torch.sign(grad), origin, config.eps_v
        ).detach()
        linf = _check_budget(current, origin, config.eps_v)
        trace.append(
            TraceEntry(kind="image", interaction=0, step=j,
                       value=float(loss.detach()), linf=linf)
        )
    budget_ok = (
        float((current - origin).abs().max()) <= config.eps_v + BUDGET_SLACK
        and float(current.min()) >= 0.0
        and float(current.max()) <= 1.0
    )
    return AttackResult(
        sample_id=sample.id,
        adv_image=current,
        adv_captions=tuple(captions),
        loss_trace=tuple(trace),
        budget_ok=budget_ok,
        substituted_words=tuple(0 for _ in captions),
    )
