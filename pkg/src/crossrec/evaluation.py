"""Next-event retrieval evaluation: Recall@K and NDCG@K.

Each held-out example ranks its true next event against N uniformly sampled
negative (domain, item) pairs drawn from the union of all domain
vocabularies. Ties are pessimistic: the positive loses every tie. A
sort-based oracle recomputes the metrics independently of the counting
fast path.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, NumericError
from .events import DatasetManifest, Event, TrainingExample
from .model import ModelParameters, score_candidates, target_tower_batch, user_embedding
from .pipeline import assemble_batch

PAPER_NEGATIVES = 50_000
DESK_NEGATIVES = 1_000


@dataclass(frozen=True)
class EvalConfig:
    k: int = 20
    negatives: int = 0  # 0: resolve by vocabulary size (50,000 when it fits, else 1,000)
    seed: int = 0

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.negatives < 0:
            raise ConfigError("negatives must be >= 0 (0 resolves a default)")

    def resolved_negatives(self, total_vocab: int) -> int:
        if self.negatives:
            return self.negatives
        return PAPER_NEGATIVES if total_vocab > PAPER_NEGATIVES else DESK_NEGATIVES


@dataclass(frozen=True)
class EvalReport:
    recall_at_k: float
    ndcg_at_k: float
    example_count: int
    k: int
    negatives: int
    seed: int
    variant: str
    checkpoint: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def csv(self) -> str:
        header = "recall_at_k,ndcg_at_k,example_count,k,negatives,seed,variant,checkpoint"
        row = (
            f"{self.recall_at_k!r},{self.ndcg_at_k!r},{self.example_count},"
            f"{self.k},{self.negatives},{self.seed},{self.variant},{self.checkpoint}"
        )
        return header + "\n" + row + "\n"


Catalog = dict[tuple[int, int], tuple[int, ...]]


def build_catalog(examples: list[TrainingExample]) -> Catalog:
    """(domain, item) -> categorical features, from every observed event."""
    catalog: Catalog = {}
    for ex in examples:
        for e in ex.context:
            catalog[(e.domain, e.item_id)] = e.cats
        catalog[(ex.label.domain, ex.label.item_id)] = ex.label.cats
    return catalog


def _vocab_offsets(manifest: DatasetManifest) -> np.ndarray:
    sizes = [d.vocab_size for d in manifest.domains]
    return np.concatenate([[0], np.cumsum(sizes)])


def sample_negatives(
    positive: Event,
    manifest: DatasetManifest,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """n distinct (domain, item) pairs uniform over all vocabularies, never the positive."""
    offsets = _vocab_offsets(manifest)
    total = int(offsets[-1])
    if total < 2:
        raise DataError("need at least 2 items across all vocabularies")
    if n >= total:
        warnings.warn(
            f"negative count {n} clamped to {total - 1} (vocabulary size {total})",
            stacklevel=2,
        )
        n = total - 1
    pos_gid = int(offsets[positive.domain]) + positive.item_id
    draw = rng.choice(total - 1, size=n, replace=False)
    gids = draw + (draw >= pos_gid)
    domains = np.searchsorted(offsets, gids, side="right") - 1
    items = gids - offsets[domains]
    return domains.astype(np.int64), items.astype(np.int64)


def rank_from_scores(positive_score: float, negative_scores: np.ndarray) -> int:
    """Pessimistic rank: 1 + strictly-higher negatives + tied negatives."""
    neg = np.asarray(negative_scores)
    if not (np.isfinite(positive_score) and np.isfinite(neg).all()):
        raise NumericError("non-finite candidate score")
    return int(1 + (neg > positive_score).sum() + (neg == positive_score).sum())


def recall_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    return 1.0 / math.log2(1.0 + rank) if rank <= k else 0.0


def metric_oracle(scores, positive_index: int, k: int) -> tuple[float, float]:
    """Sort-based recomputation: order candidates by descending score with the
    positive after every tied negative, then read the metrics off its position."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i == positive_index))
    rank = order.index(positive_index) + 1
    return recall_at_k(rank, k), ndcg_at_k(rank, k)


def _candidate_cats(
    domains: np.ndarray, items: np.ndarray, catalog: Catalog, s_max: int
) -> np.ndarray:
    cats = np.full((len(domains), s_max), -1, np.int64)
    for i, (d, item) in enumerate(zip(domains.tolist(), items.tolist())):
        known = catalog.get((d, item))
        if known:
            cats[i, : len(known)] = known
    return cats


def model_scorer(params: ModelParameters, manifest: DatasetManifest, catalog: Catalog):
    """Scorer closure: (example, candidate domains, items) -> scores array."""
    s_max = max((d.cat_arity for d in manifest.domains), default=0)

    def scorer(example: TrainingExample, cand_domains: np.ndarray, cand_items: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            batch = assemble_batch([example], manifest)
            h_star = user_embedding(batch, params)
            cats = _candidate_cats(cand_domains, cand_items, catalog, s_max)
            targets = target_tower_batch(cand_domains, cand_items, cats, params)
            return score_candidates(h_star, targets, params).data[0]

    return scorer


def rank_positive(
    params: ModelParameters,
    context: list[Event],
    positive: Event,
    negatives: tuple[np.ndarray, np.ndarray],
    catalog: Catalog | None = None,
) -> int:
    """Rank of the positive among [positive] + negatives for one context."""
    if not context:
        raise DataError("context must be non-empty")
    example = TrainingExample(user_id=0, context=list(context), label=positive)
    neg_domains, neg_items = negatives
    cand_domains = np.concatenate([[positive.domain], neg_domains]).astype(np.int64)
    cand_items = np.concatenate([[positive.item_id], neg_items]).astype(np.int64)
    catalog = dict(catalog or {})
    catalog[(positive.domain, positive.item_id)] = positive.cats
    scorer = model_scorer(params, params.manifest, catalog)
    scores = scorer(example, cand_domains, cand_items)
    return rank_from_scores(float(scores[0]), scores[1:])


def evaluate_with_scorer(
    scorer,
    test_examples: list[TrainingExample],
    manifest: DatasetManifest,
    config: EvalConfig,
) -> tuple[float, float, int]:
    """Mean (recall, ndcg, count) under an arbitrary scorer; negatives per example
    derive from (config.seed, example index)."""
    config.validate()
    if not test_examples:
        raise DataError("empty test set")
    total_vocab = sum(d.vocab_size for d in manifest.domains)
    n = config.resolved_negatives(total_vocab)
    recalls: list[float] = []
    ndcgs: list[float] = []
    for idx, ex in enumerate(test_examples):
        rng = np.random.default_rng([config.seed, idx])
        neg_domains, neg_items = sample_negatives(ex.label, manifest, n, rng)
        cand_domains = np.concatenate([[ex.label.domain], neg_domains]).astype(np.int64)
        cand_items = np.concatenate([[ex.label.item_id], neg_items]).astype(np.int64)
        scores = np.asarray(scorer(ex, cand_domains, cand_items), dtype=np.float64)
        rank = rank_from_scores(float(scores[0]), scores[1:])
        recalls.append(recall_at_k(rank, config.k))
        ndcgs.append(ndcg_at_k(rank, config.k))
    count = len(test_examples)
    recall = math.fsum(recalls) / count
    ndcg = math.fsum(ndcgs) / count
    if ndcg > recall:
        raise NumericError("ndcg exceeded recall; per-example gains must be <= 1")
    return recall, ndcg, count


def evaluate(
    params: ModelParameters,
    test_examples: list[TrainingExample],
    config: EvalConfig,
    catalog: Catalog | None = None,
    checkpoint_ref: str = "",
) -> EvalReport:
    """Score every held-out example against its seeded negatives."""
    manifest = params.manifest
    if catalog is None:
        catalog = build_catalog(test_examples)
    scorer = model_scorer(params, manifest, catalog)
    recall, ndcg, count = evaluate_with_scorer(scorer, test_examples, manifest, config)
    total_vocab = sum(d.vocab_size for d in manifest.domains)
    return EvalReport(
        recall_at_k=recall,
        ndcg_at_k=ndcg,
        example_count=count,
        k=config.k,
        negatives=config.resolved_negatives(total_vocab),
        seed=config.seed,
        variant=params.config.variant,
        checkpoint=checkpoint_ref,
    )
