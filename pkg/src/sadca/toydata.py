"""Deterministic toy datasets for desk-scale attack experiments.

Real retrieval corpora work because trained encoders align matched pairs.
Toy random-weight encoders have no such alignment, so this builder creates
it in the data instead: each sample gets captions built from a unique topic
word set, and its image is optimized (full-pixel sign ascent) to maximize
caption similarity under *every* encoder that will take part in the
experiment. Clean retrieval is then largely correct under each of those
encoders, which makes attack-success rates meaningful.

Everything is a pure function of the seed and arguments.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .attack import AttackConfig
from .data import Dataset, PairedSample, TokenSeq, Vocabulary, save_image_png
from .encoders import EncoderParams, encode_images, encode_texts, image_loss_gradient
from .errors import InputError
from .losses import contrastive_image_loss

WORD_POOL = (
    "amber", "azure", "coral", "crimson", "golden", "ivory", "jade", "maroon",
    "navy", "olive", "pearl", "ruby", "sable", "teal", "violet", "umber",
    "badger", "bison", "crane", "dingo", "falcon", "gecko", "heron", "ibis",
    "jackal", "koala", "lemur", "marmot", "otter", "panda", "quail", "raven",
    "arch", "boulder", "canyon", "dune", "ember", "fjord", "glacier", "harbor",
    "island", "jungle", "knoll", "lagoon", "meadow", "nebula", "orchard", "prairie",
)


def toy_vocabulary() -> Vocabulary:
    return Vocabulary.build(WORD_POOL)


def toy_lexicon(candidates_per_word: int = 10) -> dict[str, tuple[str, ...]]:
    """Each word's substitutes are the next words in the sorted pool, cyclically."""
    ordered = sorted(WORD_POOL)
    n = len(ordered)
    return {
        w: tuple(ordered[(i + j) % n] for j in range(1, candidates_per_word + 1))
        for i, w in enumerate(ordered)
    }


def _align_image_to_captions(
    image: torch.Tensor,
    own_embs: list[torch.Tensor],
    other_embs: list[torch.Tensor],
    centers: list[torch.Tensor],
    encoders: list[EncoderParams],
    steps: int,
    alpha: float,
    center_weight: float = 4.0,
) -> torch.Tensor:
    """Gradient ascent (inside [0, 1]) on a contrastive retrieval margin.

    Caption embeddings from these encoders cluster tightly around a common
    center direction, so per encoder the objective (a) attracts the image to
    its own captions minus the mean over other samples' captions (the center
    component cancels, leaving the differential that decides rankings) and
    (b) penalizes the squared projection onto the cluster center itself;
    without (b) each image's center component acts as a query-independent
    popularity score that swamps caption-to-image ranking.
    """

    def margin(leaves: list[torch.Tensor]) -> torch.Tensor:
        total = torch.zeros((), dtype=torch.float64)
        for p, own, others, center in zip(encoders, own_embs, other_embs, centers):
            emb = encode_images(p, [leaves[0]])[0]
            weight = float(len(own)) / max(1, len(others))
            total = total + contrastive_image_loss(emb, own, others, weight).total
            total = total - center_weight * (emb @ center) ** 2
        return total

    current = image
    for _ in range(steps):
        grad = image_loss_gradient(encoders[0], margin, [current])[0]
        peak = float(grad.abs().max())
        if peak == 0.0:
            break
        current = torch.clamp(current + alpha * grad / peak, 0.0, 1.0)
    return current


def make_toy_dataset(
    num_samples: int,
    image_shape: tuple[int, int, int] = (16, 16, 1),
    captions_per_sample: int = 3,
    seed: int = 0,
    encoders: list[EncoderParams] | None = None,
    align_steps: int = 60,
    align_alpha: float = 4 / 255,
    with_lexicon: bool = True,
) -> Dataset:
    """Build a toy dataset; pass the experiment's encoders to align images.

    Each sample gets a unique 3-word topic; caption m is a shuffled topic
    plus a distinct filler word, so captions are distinct but cluster in
    embedding space.
    """
    if num_samples < 1 or captions_per_sample < 1:
        raise InputError("need at least one sample and one caption per sample")
    if captions_per_sample > len(WORD_POOL) - 3:
        raise InputError("too many captions per sample for the word pool")
    rng = np.random.default_rng(seed)
    vocab = toy_vocabulary()
    pool = list(WORD_POOL)

    seen_topics: set[frozenset[str]] = set()
    all_captions: list[list[TokenSeq]] = []
    base_images: list[torch.Tensor] = []
    for _ in range(num_samples):
        while True:
            topic = [pool[int(t)] for t in rng.choice(len(pool), size=3, replace=False)]
            if frozenset(topic) not in seen_topics:
                seen_topics.add(frozenset(topic))
                break
        others = [w for w in pool if w not in topic]
        fillers = [others[int(t)] for t in
                   rng.choice(len(others), size=captions_per_sample, replace=False)]
        captions = []
        for filler in fillers:
            words = topic.copy()
            rng.shuffle(words)
            words.append(filler)
            captions.append(vocab.tokenize(" ".join(words)))
        all_captions.append(captions)
        base_images.append(torch.from_numpy(rng.uniform(0.2, 0.8, size=image_shape)))

    samples = []
    if encoders:
        encoders = list(encoders)
        # One (N*M, d) caption table per encoder; sample i's negatives are all
        # caption rows owned by other samples.
        flat = [c for caps in all_captions for c in caps]
        owner = np.repeat(np.arange(num_samples), captions_per_sample)
        tables = [encode_texts(p, flat).detach() for p in encoders]
        centers = []
        for tbl in tables:
            mean = tbl.mean(dim=0)
            centers.append(mean / torch.linalg.vector_norm(mean))
        for i in range(num_samples):
            own = [tbl[owner == i] for tbl in tables]
            other = [tbl[owner != i] for tbl in tables]
            image = _align_image_to_captions(
                base_images[i], own, other, centers, encoders, align_steps, align_alpha
            )
            samples.append(
                PairedSample(id=f"s{i:04d}", image=image, captions=tuple(all_captions[i]))
            )
    else:
        samples = [
            PairedSample(id=f"s{i:04d}", image=base_images[i], captions=tuple(all_captions[i]))
            for i in range(num_samples)
        ]

    lexicon = toy_lexicon() if with_lexicon else {}
    return Dataset(samples=tuple(samples), vocab=vocab, candidate_lexicon=lexicon)


def write_toy_workspace(
    root: Path | str,
    dataset: Dataset,
    config: AttackConfig | None = None,
    include_lexicon: bool = True,
) -> dict[str, Path]:
    """Persist a dataset as manifest.jsonl + PNGs (+ lexicon.json, config.json).

    Returns the paths written. Note PNG quantization perturbs pixels by up to
    0.5/255, so a reloaded dataset is close to but not bit-equal to the
    in-memory one.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    lines = []
    for s in dataset.samples:
        rel = f"images/{s.id}.png"
        save_image_png(s.image, root / rel)
        lines.append(json.dumps({
            "id": s.id,
            "image": rel,
            "captions": [c.source_string for c in s.captions],
        }, sort_keys=True))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    paths["manifest"] = manifest

    if include_lexicon and dataset.candidate_lexicon:
        lex = root / "lexicon.json"
        lex.write_text(json.dumps(
            {w: list(subs) for w, subs in dataset.candidate_lexicon.items()},
            sort_keys=True, indent=2,
        ) + "\n")
        paths["lexicon"] = lex

    if config is not None:
        cfg = root / "config.json"
        cfg.write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n")
        paths["config"] = cfg
    return paths
