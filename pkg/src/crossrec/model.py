"""User tower, target tower, and prediction heads.

Events from every domain are projected into one f-dimensional latent space:
the concatenation of per-domain id/categorical embedding columns (columns of
foreign domains hold that table's learned null-sentinel row), the property
scalar, and a domain embedding, pushed through a shared two-layer
projection. Three encoder variants map the latent sequence to token
outputs; a learned softmax pooling produces the user embedding h*. Targets
go through the same featurizer (no position, property zeroed), a stack of
multiplicative cross layers, and a feed-forward tower. A pair (h*, t) is
merged by element-wise sum and scored by small heads.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .attention import BlockParams, full_visibility_mask, layer_normalize, same_domain_mask, transformer_block
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericError
from .events import DatasetManifest, Event
from .pipeline import Batch

VARIANT_BASE = "Base"
VARIANT_DSE = "DomainSpecificEncoder"
VARIANT_IB = "IBToken"
VARIANTS = (VARIANT_BASE, VARIANT_DSE, VARIANT_IB)


@dataclass(frozen=True)
class ModelConfig:
    f: int = 32
    layers: int = 2
    heads: int = 2
    variant: str = VARIANT_BASE
    id_emb_dim: int = 16
    cat_emb_dim: int = 8
    domain_emb_dim: int = 8
    positional_capacity: int = 800  # must cover the longest context (window_len)
    cross_layers: int = 2
    lambda_domain: float = 1.0
    lambda_property: float = 0.1

    def validate(self) -> None:
        if self.f < 1 or self.f % self.heads != 0:
            raise ConfigError("f must be positive and divisible by heads")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.positional_capacity < 2:
            raise ConfigError("positional_capacity must be >= 2")
        if self.cross_layers < 0:
            raise ConfigError("cross_layers must be >= 0")
        if min(self.id_emb_dim, self.cat_emb_dim, self.domain_emb_dim) < 1:
            raise ConfigError("embedding dims must be >= 1")

    def private_layers(self) -> int:
        return max(1, self.layers // 2)

    def shared_layers(self) -> int:
        return max(0, self.layers - self.private_layers())


def _lin(rng: np.random.Generator, n_in: int, n_out: int) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out)), requires_grad=True)


def _emb(rng: np.random.Generator, rows: int, dim: int) -> Tensor:
    return Tensor(rng.normal(0.0, 0.1, (rows, dim)), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


@dataclass
class ModelParameters:
    """All learned tensors; only the active variant's encoder stack exists."""

    config: ModelConfig
    manifest: DatasetManifest
    item_emb: list[Tensor]          # per domain, (V_d + 1, id_dim); last row = null sentinel
    cat_emb: list[list[Tensor]]     # per domain per slot, (card + 1, cat_dim)
    domain_emb: Tensor              # (D + 1, domain_dim); last row = pad
    positional: Tensor              # (capacity, f)
    proj_w1: Tensor
    proj_b1: Tensor
    proj_w2: Tensor
    proj_b2: Tensor
    base_blocks: list[BlockParams]
    private_blocks: list[list[BlockParams]]  # [domain][layer]
    shared_blocks: list[BlockParams]
    ib_blocks_a: list[BlockParams]
    ib_blocks_c: list[BlockParams]
    ib_seeds: Tensor | None         # (D, f)
    ib_ln_gain: Tensor | None
    ib_ln_bias: Tensor | None
    pool_w: Tensor
    pool_b: Tensor
    cross_w: list[Tensor]
    cross_b: list[Tensor]
    tgt_w1: Tensor
    tgt_b1: Tensor
    tgt_w2: Tensor
    tgt_b2: Tensor
    score_w1: Tensor
    score_b1: Tensor
    score_w2: Tensor
    score_b2: Tensor
    dom_w: Tensor
    dom_b: Tensor
    prop_w: Tensor
    prop_b: Tensor

    @classmethod
    def init(cls, config: ModelConfig, manifest: DatasetManifest, seed: int = 0) -> "ModelParameters":
        config.validate()
        rng = np.random.default_rng([seed])
        f = config.f
        d_count = manifest.domain_count
        feat_width = (
            config.id_emb_dim * d_count
            + config.cat_emb_dim * sum(d.cat_arity for d in manifest.domains)
            + 1  # property scalar
            + config.domain_emb_dim
        )

        def block():
            return BlockParams.init(rng, f, 2 * f)

        base_blocks: list[BlockParams] = []
        private_blocks: list[list[BlockParams]] = []
        shared_blocks: list[BlockParams] = []
        ib_a: list[BlockParams] = []
        ib_c: list[BlockParams] = []
        ib_seeds = ib_gain = ib_bias = None

        item_emb = [_emb(rng, d.vocab_size + 1, config.id_emb_dim) for d in manifest.domains]
        cat_emb = [
            [_emb(rng, card + 1, config.cat_emb_dim) for card in d.cat_cardinalities]
            for d in manifest.domains
        ]
        domain_emb = _emb(rng, d_count + 1, config.domain_emb_dim)
        positional = _emb(rng, config.positional_capacity, f)
        proj_w1 = _lin(rng, feat_width, 2 * f)
        proj_b1 = _zeros(2 * f)
        proj_w2 = _lin(rng, 2 * f, f)
        proj_b2 = _zeros(f)

        if config.variant == VARIANT_BASE:
            base_blocks = [block() for _ in range(config.layers)]
        elif config.variant == VARIANT_DSE:
            private_blocks = [
                [block() for _ in range(config.private_layers())] for _ in range(d_count)
            ]
            shared_blocks = [block() for _ in range(config.shared_layers())]
        else:
            ib_a = [block() for _ in range(config.layers)]
            ib_c = [block() for _ in range(config.layers)]
            ib_seeds = _emb(rng, d_count, f)
            ib_gain = Tensor(np.ones(f), requires_grad=True)
            ib_bias = _zeros(f)

        return cls(
            config=config,
            manifest=manifest,
            item_emb=item_emb,
            cat_emb=cat_emb,
            domain_emb=domain_emb,
            positional=positional,
            proj_w1=proj_w1,
            proj_b1=proj_b1,
            proj_w2=proj_w2,
            proj_b2=proj_b2,
            base_blocks=base_blocks,
            private_blocks=private_blocks,
            shared_blocks=shared_blocks,
            ib_blocks_a=ib_a,
            ib_blocks_c=ib_c,
            ib_seeds=ib_seeds,
            ib_ln_gain=ib_gain,
            ib_ln_bias=ib_bias,
            pool_w=_lin(rng, f, 1),
            pool_b=_zeros(1),
            cross_w=[Tensor(rng.normal(0.0, 0.1 / np.sqrt(f), (f, f)), requires_grad=True) for _ in range(config.cross_layers)],
            cross_b=[_zeros(f) for _ in range(config.cross_layers)],
            tgt_w1=_lin(rng, f, 2 * f),
            tgt_b1=_zeros(2 * f),
            tgt_w2=_lin(rng, 2 * f, f),
            tgt_b2=_zeros(f),
            score_w1=_lin(rng, f, f),
            score_b1=_zeros(f),
            score_w2=_lin(rng, f, 1),
            score_b2=_zeros(1),
            dom_w=_lin(rng, f, d_count),
            dom_b=_zeros(d_count),
            prop_w=_lin(rng, f, 1),
            prop_b=_zeros(1),
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Deterministic (name, tensor) walk; the checkpoint and optimizer order."""
        out: list[tuple[str, Tensor]] = []
        for d, t in enumerate(self.item_emb):
            out.append((f"item_emb.{d}", t))
        for d, slots in enumerate(self.cat_emb):
            for j, t in enumerate(slots):
                out.append((f"cat_emb.{d}.{j}", t))
        out.append(("domain_emb", self.domain_emb))
        out.append(("positional", self.positional))
        for name in ("proj_w1", "proj_b1", "proj_w2", "proj_b2"):
            out.append((name, getattr(self, name)))

        def walk_block(prefix: str, b: BlockParams):
            for fld in fields(b):
                out.append((f"{prefix}.{fld.name}", getattr(b, fld.name)))

        for i, b in enumerate(self.base_blocks):
            walk_block(f"base.{i}", b)
        for d, stack in enumerate(self.private_blocks):
            for i, b in enumerate(stack):
                walk_block(f"private.{d}.{i}", b)
        for i, b in enumerate(self.shared_blocks):
            walk_block(f"shared.{i}", b)
        for i, b in enumerate(self.ib_blocks_a):
            walk_block(f"ib_a.{i}", b)
        for i, b in enumerate(self.ib_blocks_c):
            walk_block(f"ib_c.{i}", b)
        if self.ib_seeds is not None:
            out.append(("ib_seeds", self.ib_seeds))
            out.append(("ib_ln_gain", self.ib_ln_gain))
            out.append(("ib_ln_bias", self.ib_ln_bias))
        out.append(("pool_w", self.pool_w))
        out.append(("pool_b", self.pool_b))
        for k, (w, b) in enumerate(zip(self.cross_w, self.cross_b)):
            out.append((f"cross.{k}.w", w))
            out.append((f"cross.{k}.b", b))
        for name in (
            "tgt_w1", "tgt_b1", "tgt_w2", "tgt_b2",
            "score_w1", "score_b1", "score_w2", "score_b2",
            "dom_w", "dom_b", "prop_w", "prop_b",
        ):
            out.append((name, getattr(self, name)))
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


# -- featurization -----------------------------------------------------------


def _featurize(
    params: ModelParameters,
    domain_ids: np.ndarray,   # (B, M); pad slots hold |D|
    item_ids: np.ndarray,     # (B, M)
    cats: np.ndarray,         # (B, M, S_max); -1 where undefined
    prop: np.ndarray | None,  # (B, M) or None for all-zero (targets)
    positions: np.ndarray | None,  # (B, M) or None (targets)
) -> Tensor:
    manifest = params.manifest
    b, m = domain_ids.shape
    cols: list[Tensor] = []
    for d, spec in enumerate(manifest.domains):
        own = domain_ids == d
        bad = own & ((item_ids < 0) | (item_ids >= spec.vocab_size))
        if bad.any():
            raise DataError(f"item id out of vocabulary for domain {spec.name!r}")
        safe = np.where(own, item_ids, spec.vocab_size)  # foreign/pad rows -> null sentinel
        cols.append(ad.gather(params.item_emb[d], safe))
        for j, card in enumerate(spec.cat_cardinalities):
            vals = cats[:, :, j] if j < cats.shape[2] else np.full((b, m), -1)
            defined = own & (vals >= 0)
            if (defined & (vals >= card)).any():
                raise DataError(f"categorical value out of range for domain {spec.name!r} slot {j}")
            safe_c = np.where(defined, vals, card)
            cols.append(ad.gather(params.cat_emb[d][j], safe_c))
    prop_col = np.zeros((b, m, 1)) if prop is None else np.asarray(prop, dtype=np.float64)[:, :, None]
    cols.append(Tensor(prop_col))
    cols.append(ad.gather(params.domain_emb, domain_ids))
    x = ad.concat(cols, axis=2)
    h = ad.relu(x @ params.proj_w1 + params.proj_b1) @ params.proj_w2 + params.proj_b2
    if positions is not None:
        if positions.max(initial=0) >= params.config.positional_capacity:
            raise ConfigError("context longer than positional capacity")
        h = h + ad.gather(params.positional, positions)
    return h


def featurize_batch(batch: Batch, params: ModelParameters) -> Tensor:
    """(B, M, f) context latents with positional rows added."""
    return _featurize(params, batch.domain, batch.item, batch.cats, batch.prop, batch.positions)


def featurize_event(event: Event, params: ModelParameters, position: int) -> Tensor:
    """Single-event latent h_i, shape (f,)."""
    s_max = max((d.cat_arity for d in params.manifest.domains), default=0)
    cats = np.full((1, 1, s_max), -1, np.int64)
    cats[0, 0, : len(event.cats)] = event.cats
    h = _featurize(
        params,
        np.array([[event.domain]]),
        np.array([[event.item_id]]),
        cats,
        np.array([[event.prop]]),
        np.array([[position]]),
    )
    return ad.reshape(h, (params.config.f,))


# -- encoders -----------------------------------------------------------------


def _require_nonempty(real: np.ndarray) -> None:
    if not real.any(axis=1).all():
        raise NumericError("all-pad context")


def encode_base(h: Tensor, real: np.ndarray, params: ModelParameters) -> Tensor:
    """L blocks of full bidirectional self-attention over non-pad tokens."""
    _require_nonempty(real)
    permit = full_visibility_mask(real)
    x = h
    for block in params.base_blocks:
        x = transformer_block(x, permit, real, block, params.config.heads)
    return x


def encode_domain_specific(
    h: Tensor, domain_ids: np.ndarray, real: np.ndarray, params: ModelParameters
) -> Tensor:
    """Per-domain private blocks (same-domain attention), then shared blocks.

    Private stages run as masked attention over the full sequence, which
    equals running each domain's gathered sub-sequence separately: excluded
    keys get softmax weight exactly 0, and all other transforms are
    row-local. Outputs are recombined with 0/1 domain indicators.
    """
    _require_nonempty(real)
    heads = params.config.heads
    d_count = params.manifest.domain_count
    x = h
    for layer in range(params.config.private_layers()):
        combined = None
        for d in range(d_count):
            rows_d = real & (domain_ids == d)
            if not rows_d.any():
                continue
            permit_d = same_domain_mask(domain_ids, real, domain=d)
            out_d = transformer_block(x, permit_d, rows_d, params.private_blocks[d][layer], heads)
            term = out_d * Tensor(rows_d[:, :, None].astype(np.float64))
            combined = term if combined is None else combined + term
        x = combined
    permit = full_visibility_mask(real)
    for block in params.shared_blocks:
        x = transformer_block(x, permit, real, block, params.config.heads)
    return x


def encode_ib(
    h: Tensor,
    domain_ids: np.ndarray,
    real: np.ndarray,
    params: ModelParameters,
    exchange: bool = True,
) -> tuple[Tensor, Tensor]:
    """Intra-domain attention with one learned IB token per domain.

    Each layer: (a) events and their domain's IB token attend among
    themselves; (b) all IB tokens are replaced by the layer-normalized sum
    of IB tokens (the only cross-domain channel; skipped when exchange is
    False); (c) intra-domain attention again so events see the updated
    token. Returns (event token outputs (B, M, f), IB outputs (B, D, f)).
    """
    _require_nonempty(real)
    b, m, f = h.shape
    d_count = params.manifest.domain_count
    heads = params.config.heads

    ib_rows = ad.reshape(params.ib_seeds, (1, d_count, f)) * Tensor(np.ones((b, 1, 1)))
    x = ad.concat([h, ib_rows], axis=1)
    ext_dom = np.concatenate([domain_ids, np.tile(np.arange(d_count), (b, 1))], axis=1)
    ext_real = np.concatenate([real, np.ones((b, d_count), bool)], axis=1)
    permit = same_domain_mask(ext_dom, ext_real)

    for layer in range(params.config.layers):
        x = transformer_block(x, permit, ext_real, params.ib_blocks_a[layer], heads)
        if exchange:
            ib_part = ad.slice_axis(x, 1, m, m + d_count)
            shared = layer_normalize(ad.tsum(ib_part, axis=1), params.ib_ln_gain, params.ib_ln_bias)
            shared_rows = ad.reshape(shared, (b, 1, f)) * Tensor(np.ones((1, d_count, 1)))
            x = ad.concat([ad.slice_axis(x, 1, 0, m), shared_rows], axis=1)
        x = transformer_block(x, permit, ext_real, params.ib_blocks_c[layer], heads)
    return ad.slice_axis(x, 1, 0, m), ad.slice_axis(x, 1, m, m + d_count)


def encode_tokens(
    h: Tensor,
    domain_ids: np.ndarray,
    real: np.ndarray,
    params: ModelParameters,
    exchange: bool = True,
) -> Tensor:
    """Variant dispatch; every encoder maps (B, M, f) -> (B, M, f)."""
    variant = params.config.variant
    if variant == VARIANT_BASE:
        return encode_base(h, real, params)
    if variant == VARIANT_DSE:
        return encode_domain_specific(h, domain_ids, real, params)
    out, _ = encode_ib(h, domain_ids, real, params, exchange=exchange)
    return out


# -- pooling and towers --------------------------------------------------------


def pool_weights(tokens: Tensor, real: np.ndarray, params: ModelParameters) -> Tensor:
    """(B, M) softmax weights over non-pad tokens; pads get exactly 0."""
    b, m, _ = tokens.shape
    scores = ad.reshape(tokens @ params.pool_w + params.pool_b, (b, m))
    return ad.masked_softmax(scores, real)


def pool_weighted(tokens: Tensor, real: np.ndarray, params: ModelParameters) -> Tensor:
    """h* = sum_i w_i token_i over non-pad tokens; (B, f)."""
    w = pool_weights(tokens, real, params)
    return ad.tsum(ad.reshape(w, (*w.shape, 1)) * tokens, axis=1)


def user_embedding(batch: Batch, params: ModelParameters) -> Tensor:
    """Featurize, encode, pool; (B, f)."""
    h = featurize_batch(batch, params)
    tokens = encode_tokens(h, batch.domain, batch.real, params)
    return pool_weighted(tokens, batch.real, params)


def cross_stack(c0: Tensor, params: ModelParameters) -> Tensor:
    """c_{k+1} = c_0 * (W_k c_k + b_k) + c_k for each cross layer."""
    x = c0
    for w, bias in zip(params.cross_w, params.cross_b):
        x = c0 * (x @ w + bias) + x
    return x


def target_tower_batch(
    domain_ids: np.ndarray,  # (C,)
    item_ids: np.ndarray,    # (C,)
    cats: np.ndarray,        # (C, S_max), -1 where unknown
    params: ModelParameters,
) -> Tensor:
    """(C, f) target representations: featurize (no position, property zeroed),
    cross layers, then a 2-layer tower."""
    c = domain_ids.shape[0]
    h = _featurize(
        params,
        domain_ids[None, :],
        item_ids[None, :],
        cats[None, :, :],
        None,
        None,
    )
    x = cross_stack(ad.reshape(h, (c, params.config.f)), params)
    return ad.relu(x @ params.tgt_w1 + params.tgt_b1) @ params.tgt_w2 + params.tgt_b2


def target_tower(event: Event, params: ModelParameters) -> Tensor:
    """Single target representation t, shape (f,)."""
    s_max = max((d.cat_arity for d in params.manifest.domains), default=0)
    cats = np.full((1, s_max), -1, np.int64)
    cats[0, : len(event.cats)] = event.cats
    t = target_tower_batch(np.array([event.domain]), np.array([event.item_id]), cats, params)
    return ad.reshape(t, (params.config.f,))


def merge_and_score(
    h_star: Tensor, target: Tensor, params: ModelParameters
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Paired merge: (merged, score, domain_logits, property_pred) for (B, f) inputs."""
    merged = h_star + target
    b = merged.shape[0]
    score = ad.reshape(ad.relu(merged @ params.score_w1 + params.score_b1) @ params.score_w2 + params.score_b2, (b,))
    domain_logits = merged @ params.dom_w + params.dom_b
    property_pred = ad.reshape(merged @ params.prop_w + params.prop_b, (b,))
    return merged, score, domain_logits, property_pred


def score_candidates(h_star: Tensor, targets: Tensor, params: ModelParameters) -> Tensor:
    """(B, C) scores: every user embedding against every candidate target."""
    b = h_star.shape[0]
    c = targets.shape[0]
    f = params.config.f
    merged = ad.reshape(h_star, (b, 1, f)) + ad.reshape(targets, (1, c, f))
    s = ad.relu(merged @ params.score_w1 + params.score_b1) @ params.score_w2 + params.score_b2
    return ad.reshape(s, (b, c))
