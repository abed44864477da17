"""Multi-task training: in-batch sampled softmax plus auxiliary heads.

Each example's positive target competes against the other examples' label
targets; accidental collisions (same domain and item) are masked out of the
softmax. The domain head predicts the label's domain (cross-entropy) and
the property head regresses its property value (MSE). Shuffling is seeded
per epoch, so a (seed, config, data) triple fixes the loss trace exactly.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .errors import ConfigError, NumericError
from .events import DatasetManifest, TrainingExample
from .model import ModelParameters, merge_and_score, score_candidates, target_tower_batch, user_embedding
from .optim import Adam
from .pipeline import Batch, assemble_batch

logger = logging.getLogger(__name__)

TRACE_HEADER = "step,retrieval,domain,property,total"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 5
    learning_rate: float = 1e-3
    lambda_domain: float = 1.0
    lambda_property: float = 0.1
    seed: int = 0
    variant: str = ""          # echo only; must match the model when set
    eval_every_steps: int = 0  # 0: checkpoint at the end only

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (in-batch negatives)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.lambda_domain < 0 or self.lambda_property < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.eval_every_steps < 0:
            raise ConfigError("eval_every_steps must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    step: int
    retrieval: float
    domain: float
    property: float
    total: float

    def validate(self, lambda_domain: float, lambda_property: float) -> None:
        recomputed = self.retrieval + lambda_domain * self.domain + lambda_property * self.property
        if self.total != recomputed:
            raise NumericError(f"loss breakdown identity broken at step {self.step}")
        for name in ("retrieval", "domain", "property", "total"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise NumericError(f"{name} loss invalid at step {self.step}: {v}")

    def csv_row(self) -> str:
        return f"{self.step},{self.retrieval!r},{self.domain!r},{self.property!r},{self.total!r}"


def in_batch_candidates(batch: Batch) -> np.ndarray:
    """(B, B) permission mask: example i may score candidate j.

    Candidate j is example j's label target. The diagonal (the positive) is
    always permitted; off-diagonal entries that collide with the positive
    (same domain and item) are masked.
    """
    if batch.size < 2:
        raise ConfigError("in-batch negatives need batch size >= 2")
    same_item = batch.label_item[:, None] == batch.label_item[None, :]
    same_domain = batch.label_domain[:, None] == batch.label_domain[None, :]
    allowed = ~(same_item & same_domain)
    np.fill_diagonal(allowed, True)
    return allowed


def sampled_softmax_loss(scores: Tensor, allowed: np.ndarray, positive_index: np.ndarray) -> Tensor:
    """Mean cross-entropy at the positive over permitted candidates."""
    b = scores.shape[0]
    rows = np.arange(b)
    if not allowed[rows, positive_index].all():
        raise NumericError("positive candidate is masked")
    lonely = allowed.sum(axis=1) == 1
    if lonely.any():
        logger.info("%d row(s) with fully masked negatives; their loss term is 0", int(lonely.sum()))
    p = ad.masked_softmax(scores, allowed)
    onehot = np.zeros(scores.shape)
    onehot[rows, positive_index] = 1.0
    pos_p = ad.tsum(p * onehot, axis=1)
    return ad.tmean(-ad.log(pos_p))


@contextmanager
def _term(name: str):
    try:
        yield
    except NumericError as exc:
        raise NumericError(f"non-finite value in {name} term: {exc}") from exc


def multitask_loss(
    batch: Batch,
    params: ModelParameters,
    lambda_domain: float,
    lambda_property: float,
) -> tuple[Tensor, "LossBreakdown"]:
    """Total loss tensor plus a float breakdown satisfying the exact identity
    total == retrieval + lambda_domain*domain + lambda_property*property."""
    with _term("retrieval"):
        h_star = user_embedding(batch, params)
        targets = target_tower_batch(batch.label_domain, batch.label_item, batch.label_cats, params)
        scores = score_candidates(h_star, targets, params)
        allowed = in_batch_candidates(batch)
        retrieval = sampled_softmax_loss(scores, allowed, np.arange(batch.size))
    with _term("domain"):
        _, _, domain_logits, property_pred = merge_and_score(h_star, targets, params)
        p = ad.masked_softmax(domain_logits)
        onehot = np.zeros(domain_logits.shape)
        onehot[np.arange(batch.size), batch.label_domain] = 1.0
        domain = ad.tmean(-ad.log(ad.tsum(p * onehot, axis=1)))
    with _term("property"):
        prop = ad.tmean((property_pred - batch.label_prop) ** 2)
    with _term("total"):
        total = retrieval + domain * lambda_domain + prop * lambda_property
    breakdown = LossBreakdown(
        step=0,
        retrieval=float(retrieval.data),
        domain=float(domain.data),
        property=float(prop.data),
        total=float(retrieval.data) + lambda_domain * float(domain.data) + lambda_property * float(prop.data),
    )
    return total, breakdown


def write_trace(rows: list[LossBreakdown], path: str | Path) -> None:
    lines = [TRACE_HEADER] + [r.csv_row() for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def train(
    examples: list[TrainingExample],
    params: ModelParameters,
    config: TrainConfig,
    manifest: DatasetManifest,
    trace_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> tuple[ModelParameters, list[LossBreakdown]]:
    """Seeded epochs of Adam over shuffled batches; returns the loss trace.

    Aborts with a diagnostic naming the step and loss term on any
    non-finite value. Remainder chunks of size 1 are skipped (no negatives).
    """
    config.validate()
    if config.variant and config.variant != params.config.variant:
        raise ConfigError(
            f"train variant {config.variant!r} does not match model variant {params.config.variant!r}"
        )
    if not examples:
        raise ConfigError("training set is empty")

    opt = Adam(params.tensors(), lr=config.learning_rate)
    trace: list[LossBreakdown] = []
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(examples))
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            if len(chunk) < 2:
                continue
            step += 1
            batch = assemble_batch([examples[i] for i in chunk], manifest)
            try:
                total, breakdown = multitask_loss(
                    batch, params, config.lambda_domain, config.lambda_property
                )
                opt.zero_grad()
                total.backward()
                opt.step()
            except NumericError as exc:
                raise NumericError(f"training aborted at step {step}: {exc}") from exc
            breakdown = LossBreakdown(
                step=step,
                retrieval=breakdown.retrieval,
                domain=breakdown.domain,
                property=breakdown.property,
                total=breakdown.total,
            )
            breakdown.validate(config.lambda_domain, config.lambda_property)
            trace.append(breakdown)
            if (
                checkpoint_path is not None
                and config.eval_every_steps
                and step % config.eval_every_steps == 0
            ):
                save_checkpoint(params, checkpoint_path)
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
    if trace_path is not None:
        write_trace(trace, trace_path)
    return params, trace
