"""Masked multi-head self-attention and the post-norm transformer block.

Attention masks are boolean (query, key) permission matrices: True means the
query position may attend to the key position. A pad query row (all False)
produces a zero attention mix; a real query row with no permitted key is an
error. Masked keys are excluded from the softmax normalizing sum exactly, so
an all-permitted mask is bitwise identical to no mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError


def layer_normalize(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """gain * (x - mean) / sqrt(population_var + eps) + bias over the last axis."""
    return ad.layer_norm_core(x, eps=eps) * gain + bias


# -- mask builders ---------------------------------------------------------


def full_visibility_mask(real: np.ndarray) -> np.ndarray:
    """(B, M) real-token flags -> (B, M, M) permit matrix: real rows see all real keys."""
    real = np.asarray(real, dtype=bool)
    return real[:, :, None] & real[:, None, :]

def same_domain_mask(domains: np.ndarray, real: np.ndarray, domain: int | None = None) -> np.ndarray:
    """Permit attention only between real tokens of the same domain.

    With `domain` given, additionally restrict queries and keys to that domain
    (rows outside it come out empty and must be treated as inactive).
    """
    domains = np.asarray(domains)
    real = np.asarray(real, dtype=bool)
    same = domains[:, :, None] == domains[:, None, :]
    permit = same & real[:, :, None] & real[:, None, :]
    if domain is not None:
        in_d = (domains == domain) & real
        permit = permit & in_d[:, :, None] & in_d[:, None, :]
    return permit


def validate_mask(permit: np.ndarray, row_real: np.ndarray) -> None:
    """Every real query row needs >= 1 permitted key."""
    has_key = permit.any(axis=-1)
    bad = np.asarray(row_real, dtype=bool) & ~has_key
    if bad.any():
        raise NumericError("attention query row with zero permitted keys")


# -- transformer block -------------------------------------------------------


@dataclass
class BlockParams:
    """Weights of one post-norm transformer block (projections are (f, f)).

    The key projection carries no bias: a shared key offset shifts every
    score in a softmax row equally, so the softmax is invariant to it and
    its gradient is identically zero.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bv: Tensor
    bo: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, f: int, ffn_hidden: int) -> "BlockParams":
        def lin(n_in, n_out):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out)), requires_grad=True)

        def zeros(n):
            return Tensor(np.zeros(n), requires_grad=True)

        return cls(
            wq=lin(f, f), wk=lin(f, f), wv=lin(f, f), wo=lin(f, f),
            bq=zeros(f), bv=zeros(f), bo=zeros(f),
            ln1_gain=Tensor(np.ones(f), requires_grad=True), ln1_bias=zeros(f),
            ln2_gain=Tensor(np.ones(f), requires_grad=True), ln2_bias=zeros(f),
            ffn_w1=lin(f, ffn_hidden), ffn_b1=zeros(ffn_hidden),
            ffn_w2=lin(ffn_hidden, f), ffn_b2=zeros(f),
        )

    def tensors(self) -> list[Tensor]:
        return [getattr(self, fld.name) for fld in fields(self)]


def attention_mix(x: Tensor, permit: np.ndarray, p: BlockParams, head_count: int) -> Tensor:
    """Scaled dot-product attention, heads concatenated (no output projection).

    x (B, M, f); permit (B, M, M). Scale is 1/sqrt(f / head_count). Rows with
    no permitted key yield a zero mix.
    """
    b, m, f = x.shape
    if f % head_count != 0:
        raise ValueError("latent dim must be divisible by head count")
    hd = f // head_count

    def split(t):
        return ad.swapaxes(ad.reshape(t, (b, m, head_count, hd)), 1, 2)  # (B, H, M, hd)

    q = split(x @ p.wq + p.bq)
    k = split(x @ p.wk)
    v = split(x @ p.wv + p.bv)
    scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(hd))  # (B, H, M, M)
    weights = ad.masked_softmax(scores, permit[:, None, :, :], allow_empty_rows=True)
    mix = weights @ v  # (B, H, M, hd)
    return ad.reshape(ad.swapaxes(mix, 1, 2), (b, m, f))


def transformer_block(
    x: Tensor,
    permit: np.ndarray,
    row_real: np.ndarray,
    p: BlockParams,
    head_count: int,
) -> Tensor:
    """Post-norm block: attention -> add&norm -> feed-forward -> add&norm."""
    validate_mask(permit, row_real)
    attn = attention_mix(x, permit, p, head_count) @ p.wo + p.bo
    h = layer_normalize(x + attn, p.ln1_gain, p.ln1_bias)
    ff = ad.relu(h @ p.ffn_w1 + p.ffn_b1) @ p.ffn_w2 + p.ffn_b2
    return layer_normalize(h + ff, p.ln2_gain, p.ln2_bias)


def masked_multi_head_attention(
    x: Tensor | np.ndarray,
    permit: np.ndarray,
    p: BlockParams,
    head_count: int,
    row_real: np.ndarray | None = None,
) -> Tensor:
    """Full transformer block over a single (M, f) sequence or a (B, M, f) batch."""
    t = ad.as_tensor(x)
    squeeze = t.ndim == 2
    if squeeze:
        t = ad.reshape(t, (1, *t.shape))
        if permit is not None:
            permit = np.asarray(permit)[None, :, :]
    if row_real is None:
        row_real = np.ones(t.shape[:2], dtype=bool)
    elif row_real.ndim == 1:
        row_real = row_real[None, :]
    if permit is None:
        b, m = t.shape[:2]
        permit = np.ones((b, m, m), dtype=bool)
    out = transformer_block(t, permit, row_real, p, head_count)
    return ad.reshape(out, out.shape[1:]) if squeeze else out
