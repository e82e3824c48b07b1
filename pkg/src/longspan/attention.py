"""Banded local attention with per-block transient global tokens.

Every query attends to keys within ``local_radius`` positions plus one
global token per block of ``block_size`` positions, where a global token is
the sum of its block's embeddings, recomputed each layer. The normative
implementation below is dense-masked: the sparsity lives in the mask, which
keeps the semantics easy to verify. A ScoreCounter records how many
token-to-token pairs a call scores (the quantity the band keeps linear in
sequence length); token-to-global pairs are tallied separately since they
grow as ``n * ceil(n / block_size)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AttentionConfig:
    local_radius: int = 127
    block_size: int = 16
    relpos_buckets: int = 32
    relpos_max_distance: int = 128
    disable_global: bool = False  # test hook: drop all token-to-global links

    def __post_init__(self) -> None:
        if self.local_radius < 0:
            raise ValueError("local_radius must be >= 0")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.relpos_buckets < 4 or self.relpos_buckets % 2:
            raise ValueError("relpos_buckets must be an even number >= 4")
        if self.relpos_max_distance < 2:
            raise ValueError("relpos_max_distance must be >= 2")


@dataclass
class ScoreCounter:
    token_pairs: int = 0
    global_pairs: int = 0


def local_attention_mask(n: int, radius: int) -> np.ndarray:
    """Boolean [n, n] mask allowing pairs with |i - j| <= radius."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    pos = np.arange(n)
    return np.abs(pos[:, None] - pos[None, :]) <= radius


def tglobal_tokens(x: np.ndarray, block_size: int) -> np.ndarray:
    """Sum embeddings per block of ``block_size`` positions.

    Input [n, d] yields [ceil(n / block_size), d]; a short final block sums
    whatever positions it has.
    """
    n, d = x.shape
    if n < 1:
        raise ValueError("need at least one position")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    g = math.ceil(n / block_size)
    out = np.zeros((g, d), dtype=x.dtype)
    blocks = np.arange(n) // block_size
    np.add.at(out, blocks, x)
    return out


def relpos_bucket(
    distance,
    *,
    bidirectional: bool,
    num_buckets: int = 32,
    max_distance: int = 128,
):
    """Map relative distances to bucket indices.

    Half the available buckets index small distances exactly; the rest are
    log-spaced out to ``max_distance``, beyond which everything shares the
    final bucket. Bidirectional mode splits the bucket range by sign
    (positive distances take the upper half); unidirectional mode clamps
    negative distances to bucket 0.
    """
    d = np.asarray(distance)
    if bidirectional:
        half = num_buckets // 2
        out = np.where(d > 0, half, 0)
        mag = np.abs(d)
    else:
        half = num_buckets
        out = np.zeros_like(d)
        mag = np.maximum(d, 0)
    max_exact = half // 2
    safe = np.maximum(mag, 1)
    log_scaled = max_exact + np.floor(
        np.log(safe / max_exact)
        / math.log(max_distance / max_exact)
        * (half - max_exact - 1)
    ).astype(d.dtype if d.dtype.kind == "i" else np.int64)
    log_scaled = np.minimum(log_scaled, half - 1)
    out = out + np.where(mag < max_exact, mag, log_scaled)
    return out if out.shape else int(out)


def attend(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    *,
    bias: np.ndarray | None = None,
    mask: np.ndarray | None = None,
    counter: ScoreCounter | None = None,
    return_probs: bool = False,
):
    """Scaled dot-product attention over [..., n, d] arrays.

    ``mask`` (broadcastable to the score shape) marks allowed pairs; absent
    mask means full attention, which doubles as the dense reference. Rows
    with no allowed key yield a zero context row. Softmax is max-subtracted;
    each row with any allowed key sums to 1.
    """
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = q @ k.swapaxes(-1, -2) * scale
    if bias is not None:
        scores = scores + bias
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    if counter is not None:
        multiplicity = int(np.prod(scores.shape[:-2], dtype=np.int64))
        if mask is None:
            counter.token_pairs += scores.shape[-2] * scores.shape[-1] * multiplicity
        else:
            per_call = int(np.sum(np.broadcast_to(mask, scores.shape)))
            counter.token_pairs += per_call
    peak = np.max(scores, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    weights = np.exp(scores - peak)
    denom = np.sum(weights, axis=-1, keepdims=True)
    probs = weights / np.where(denom == 0.0, 1.0, denom)
    ctx = probs @ v
    if return_probs:
        return ctx, probs
    return ctx


def tglobal_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    global_keys: np.ndarray,
    global_values: np.ndarray,
    config: AttentionConfig,
    *,
    position_bias: np.ndarray | None = None,
    global_bias: np.ndarray | None = None,
    counter: ScoreCounter | None = None,
    return_probs: bool = False,
):
    """Attention over the local band plus all global tokens.

    q/k/v are [..., n, d]; global_keys/values are [..., g, d] projections of
    the per-block global tokens. Every query sees every global token unless
    the ``disable_global`` hook is set. Biases broadcast against the
    [..., n, n] and [..., n, g] score blocks.
    """
    n = q.shape[-2]
    band = local_attention_mask(n, config.local_radius)
    if counter is not None:
        multiplicity = int(np.prod(q.shape[:-2], dtype=np.int64))
        counter.token_pairs += int(band.sum()) * multiplicity
        if not config.disable_global:
            counter.global_pairs += n * global_keys.shape[-2] * multiplicity
    if config.disable_global:
        k_all, v_all, mask = k, v, band
        bias = position_bias
    else:
        g = global_keys.shape[-2]
        k_all = np.concatenate([k, global_keys], axis=-2)
        v_all = np.concatenate([v, global_values], axis=-2)
        gmask = np.ones((n, g), dtype=bool)
        mask = np.concatenate([band, gmask], axis=-1)
        if position_bias is None and global_bias is None:
            bias = None
        else:
            tok_bias = position_bias
            if tok_bias is None:
                tok_bias = np.zeros((n, n))
            gb = global_bias
            if gb is None:
                gb = np.zeros((n, g))
            tok_bias, gb = _align_bias(tok_bias, gb)
            bias = np.concatenate([tok_bias, gb], axis=-1)
    return attend(q, k_all, v_all, bias=bias, mask=mask, return_probs=return_probs)


def _align_bias(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # broadcast leading dims so the two bias blocks can concatenate
    lead = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    return (
        np.broadcast_to(a, lead + a.shape[-1:]),
        np.broadcast_to(b, lead + b.shape[-1:]),
    )
