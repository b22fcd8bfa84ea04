"""Retrieval indexing, attack-success-rate evaluation, and transfer matrices.

Text retrieval (TR) queries an image against every caption in the dataset
and counts a hit when any of the sample's own captions lands in the top k.
Image retrieval (IR) queries each caption against every image, pooling the
per-caption results. ASR@k is, by default, computed only over queries whose
clean retrieval was correct at rank k, so an identity attack scores exactly
0; the literal all-queries denominator is available as ``asr_mode="all"``.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from .attack import AttackConfig, AttackResult, pgd_baseline, sadca_attack
from .data import Dataset, render_tokens
from .encoders import EncoderParams, encode_images, encode_texts
from .errors import InputError, UndefinedMetricError

DEFAULT_KS = (1, 5, 10)
ASR_MODES = ("correct_before", "all")
ATTACK_KINDS = ("sadca", "pgd")


@dataclass(frozen=True)
class RetrievalIndex:
    """Clean embeddings of a whole dataset under one encoder."""

    sample_ids: tuple[str, ...]
    image_embs: torch.Tensor  # (N, d)
    text_embs: torch.Tensor  # (T, d), all captions flattened
    text_owner: np.ndarray  # (T,) sample index of each caption row

    def image_emb_cache(self) -> dict[str, torch.Tensor]:
        return {sid: self.image_embs[i] for i, sid in enumerate(self.sample_ids)}


def build_index(dataset: Dataset, params: EncoderParams) -> RetrievalIndex:
    """Embed every image and caption; deterministic for fixed inputs."""
    if len(dataset) == 0:
        raise InputError("cannot index an empty dataset")
    image_embs = encode_images(params, [s.image for s in dataset.samples]).detach()
    texts, owners = [], []
    for i, s in enumerate(dataset.samples):
        for c in s.captions:
            texts.append(c)
            owners.append(i)
    text_embs = encode_texts(params, texts).detach()
    return RetrievalIndex(
        sample_ids=tuple(s.id for s in dataset.samples),
        image_embs=image_embs,
        text_embs=text_embs,
        text_owner=np.asarray(owners, dtype=np.int64),
    )


def _topk(scores: np.ndarray, k: int) -> np.ndarray:
    # Stable descending order so exact score ties break by index.
    return np.argsort(-scores, kind="stable")[:k]


def text_retrieval_hits(
    index: RetrievalIndex, query_image_embs: torch.Tensor, k: int
) -> np.ndarray:
    """Per-sample booleans: any own caption in the top-k texts for the image query."""
    scores_all = (query_image_embs @ index.text_embs.T).numpy()
    hits = np.zeros(len(index.sample_ids), dtype=bool)
    for i in range(len(index.sample_ids)):
        top = _topk(scores_all[i], k)
        hits[i] = bool((index.text_owner[top] == i).any())
    return hits


def image_retrieval_hits(
    index: RetrievalIndex, query_text_embs: torch.Tensor, owners: np.ndarray, k: int
) -> np.ndarray:
    """Per-caption booleans: owning image in the top-k images for the caption query."""
    scores_all = (query_text_embs @ index.image_embs.T).numpy()
    hits = np.zeros(len(owners), dtype=bool)
    for q in range(len(owners)):
        top = _topk(scores_all[q], k)
        hits[q] = owners[q] in top
    return hits


def asr_at_k(
    clean_hits: np.ndarray, adv_hits: np.ndarray, k: int, mode: str = "correct_before"
) -> float:
    """Percentage of broken retrievals.

    ``correct_before``: share of clean top-k-correct queries that became
    incorrect. ``all``: share of all queries that are incorrect after attack.
    """
    if mode not in ASR_MODES:
        raise InputError(f"unknown asr mode {mode!r}")
    clean_hits = np.asarray(clean_hits, dtype=bool)
    adv_hits = np.asarray(adv_hits, dtype=bool)
    if clean_hits.shape != adv_hits.shape:
        raise InputError("clean and adversarial hit vectors must align")
    if mode == "all":
        if len(adv_hits) == 0:
            raise UndefinedMetricError(f"no queries to evaluate at k={k}")
        return 100.0 * float((~adv_hits).sum()) / len(adv_hits)
    correct_before = clean_hits
    n = int(correct_before.sum())
    if n == 0:
        raise UndefinedMetricError(f"no clean retrieval was correct at k={k}")
    broken = correct_before & ~adv_hits
    return 100.0 * float(broken.sum()) / n


def evaluated_count(clean_hits: np.ndarray, mode: str = "correct_before") -> int:
    clean_hits = np.asarray(clean_hits, dtype=bool)
    return int(clean_hits.sum()) if mode == "correct_before" else len(clean_hits)


@dataclass(frozen=True)
class RetrievalReport:
    """ASR@k in both retrieval directions for one surrogate/target pair."""

    surrogate: str
    target: str
    tr_asr: dict[int, float]
    ir_asr: dict[int, float]
    tr_n: dict[int, int]
    ir_n: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "surrogate": self.surrogate,
            "target": self.target,
            "tr_asr": {str(k): v for k, v in self.tr_asr.items()},
            "ir_asr": {str(k): v for k, v in self.ir_asr.items()},
            "tr_n": {str(k): v for k, v in self.tr_n.items()},
            "ir_n": {str(k): v for k, v in self.ir_n.items()},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RetrievalReport":
        return cls(
            surrogate=raw["surrogate"],
            target=raw["target"],
            tr_asr={int(k): float(v) for k, v in raw["tr_asr"].items()},
            ir_asr={int(k): float(v) for k, v in raw["ir_asr"].items()},
            tr_n={int(k): int(v) for k, v in raw["tr_n"].items()},
            ir_n={int(k): int(v) for k, v in raw["ir_n"].items()},
        )


def num_workers() -> int:
    return max(1, int(os.environ.get("SADCA_NUM_WORKERS", "1")))


def attack_dataset(
    dataset: Dataset,
    config: AttackConfig,
    params: EncoderParams,
    attack: str = "sadca",
    image_emb_cache: dict[str, torch.Tensor] | None = None,
) -> dict[str, AttackResult]:
    """Attack every sample; results keyed and ordered by sample id.

    Per-sample seeding makes results independent of worker scheduling, so the
    output is identical for any SADCA_NUM_WORKERS.
    """
    if attack not in ATTACK_KINDS:
        raise InputError(f"unknown attack kind {attack!r}")
    samples = sorted(dataset.samples, key=lambda s: s.id)
    if attack == "sadca" and image_emb_cache is None and config.strategy != "random":
        image_emb_cache = build_index(dataset, params).image_emb_cache()

    def run(sample):
        if attack == "pgd":
            return pgd_baseline(sample, config, params)
        return sadca_attack(sample, dataset, config, params, image_emb_cache=image_emb_cache)

    workers = num_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, samples))
    else:
        results = [run(s) for s in samples]
    return {s.id: r for s, r in zip(samples, results)}


def evaluate_attack(
    dataset: Dataset,
    results: dict[str, AttackResult],
    surrogate_label: str,
    target_params: EncoderParams,
    ks: tuple[int, ...] = DEFAULT_KS,
    asr_mode: str = "correct_before",
) -> RetrievalReport:
    """Score one attack run against one (possibly different) target encoder."""
    index = build_index(dataset, target_params)
    ordered = [results[s.id] for s in dataset.samples]

    adv_image_embs = encode_images(params=target_params,
                                   images=[r.adv_image for r in ordered]).detach()
    adv_texts, owners = [], []
    for i, r in enumerate(ordered):
        for c in r.adv_captions:
            adv_texts.append(c)
            owners.append(i)
    adv_text_embs = encode_texts(target_params, adv_texts).detach()
    owners_arr = np.asarray(owners, dtype=np.int64)

    tr_asr, ir_asr, tr_n, ir_n = {}, {}, {}, {}
    for k in ks:
        clean_tr = text_retrieval_hits(index, index.image_embs, k)
        adv_tr = text_retrieval_hits(index, adv_image_embs, k)
        clean_ir = image_retrieval_hits(index, index.text_embs, index.text_owner, k)
        adv_ir = image_retrieval_hits(index, adv_text_embs, owners_arr, k)
        tr_asr[k] = asr_at_k(clean_tr, adv_tr, k, mode=asr_mode)
        ir_asr[k] = asr_at_k(clean_ir, adv_ir, k, mode=asr_mode)
        tr_n[k] = evaluated_count(clean_tr, asr_mode)
        ir_n[k] = evaluated_count(clean_ir, asr_mode)
    return RetrievalReport(
        surrogate=surrogate_label, target=target_params.label,
        tr_asr=tr_asr, ir_asr=ir_asr, tr_n=tr_n, ir_n=ir_n,
    )


def transfer_matrix(
    surrogate_params: list[EncoderParams],
    target_params: list[EncoderParams],
    dataset: Dataset,
    config: AttackConfig,
    attack: str = "sadca",
    ks: tuple[int, ...] = DEFAULT_KS,
    asr_mode: str = "correct_before",
) -> tuple[list[RetrievalReport], dict[str, dict[str, AttackResult]]]:
    """Attack once per surrogate, score once per (surrogate, target) pair.

    Returns the reports in surrogate-major order plus the raw per-surrogate
    attack results (keyed by surrogate label).
    """
    if not surrogate_params or not target_params:
        raise InputError("need at least one surrogate and one target")
    reports: list[RetrievalReport] = []
    all_results: dict[str, dict[str, AttackResult]] = {}
    for sp in surrogate_params:
        results = attack_dataset(dataset, config, sp, attack=attack)
        all_results[sp.label] = results
        for tp in target_params:
            reports.append(
                evaluate_attack(dataset, results, sp.label, tp, ks=ks, asr_mode=asr_mode)
            )
    return reports, all_results


def adv_image_digest(result: AttackResult) -> str:
    """Stable digest of the unquantized adversarial pixels."""
    raw = np.ascontiguousarray(result.adv_image.detach().numpy()).tobytes()
    return hashlib.sha256(raw).hexdigest()


def per_sample_record(dataset: Dataset, result: AttackResult, surrogate: str) -> dict:
    return {
        "id": result.sample_id,
        "surrogate": surrogate,
        "budget_ok": result.budget_ok,
        "substituted_words": list(result.substituted_words),
        "adv_captions": [render_tokens(dataset.vocab, c.tokens) for c in result.adv_captions],
        "adv_image_sha256": adv_image_digest(result),
        "losses": [e.to_dict() for e in result.loss_trace],
    }


def results_json(config: AttackConfig, per_sample: list[dict], reports: list[RetrievalReport]) -> str:
    """Serialize the harness output; byte-stable for identical inputs."""
    payload = {
        "config": config.to_dict(),
        "per_sample": per_sample,
        "reports": [r.to_dict() for r in reports],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def format_report_table(reports: list[RetrievalReport], ks: tuple[int, ...] = DEFAULT_KS) -> str:
    """Aligned-column text table of a transfer matrix."""
    header = ["surrogate", "target"]
    for k in ks:
        header += [f"TR@{k}", f"IR@{k}"]
    rows = [header]
    for r in reports:
        row = [r.surrogate, r.target]
        for k in ks:
            row += [f"{r.tr_asr.get(k, float('nan')):.2f}", f"{r.ir_asr.get(k, float('nan')):.2f}"]
        rows.append(row)
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)) for row in rows]
    return "\n".join(lines) + "\n"
