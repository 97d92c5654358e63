"""Temporal modeling over embedded feature sequences.

Two variants share the same building blocks:

* Classic: self-attention encoder layers over the frame-wise
  concatenation of all embedded feature streams.
* Multimodal (for the per-video regression path): each stream queries
  keys/values drawn from the concatenation of every stream, so
  cross-modal interactions happen inside every block; streams are
  concatenated only after the final block.

Both run offline over whole segments, so attention is unmasked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    dropout,
    layer_norm,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)


class LengthMismatch(ValueError):
    """Feature streams to be concatenated disagree on frame count."""


class Variant(Enum):
    CLASSIC = "classic"
    TEMMA = "temma"


@dataclass
class EncoderConfig:
    """Architecture knobs for either encoder variant.

    d_in is the per-layer width: the concatenated width for Classic, the
    per-stream width for the multimodal variant. d_ff defaults to 4x the
    width, the usual transformer convention.
    """

    d_in: int
    n_layers: int = 4
    n_heads: int = 4
    d_ff: Optional[int] = None
    dropout: float = 0.1
    variant: Variant = Variant.CLASSIC

    def __post_init__(self) -> None:
        if self.d_ff is None:
            self.d_ff = 4 * self.d_in
        if self.d_in % self.n_heads != 0:
            raise ValueError(f"d_in={self.d_in} not divisible by n_heads={self.n_heads}")
        if self.d_ff < self.d_in:
            raise ValueError(f"d_ff={self.d_ff} must be >= d_in={self.d_in}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class AttentionParams:
    """Projections for one multi-head attention block.

    Matrices are stored (in_dim, out_dim) so forward passes are plain
    x @ W. Key/value input width may exceed the query width when the
    keys come from a cross-stream concatenation.
    """

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    norm1_gamma: Tensor
    norm1_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norm2_gamma: Tensor
    norm2_beta: Tensor


@dataclass
class AttentionWeights:
    """Per-layer (or per-layer-per-stream) row-stochastic attention maps."""

    layers: list = field(default_factory=list)  # arrays (..., n_heads, T, T_kv)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_attention(d: int, rng: np.random.Generator, d_kv_in: Optional[int] = None) -> AttentionParams:
    d_kv_in = d if d_kv_in is None else d_kv_in
    return AttentionParams(
        wq=_uniform(rng, d, (d, d)),
        bq=Tensor(np.zeros(d), requires_grad=True),
        wk=_uniform(rng, d_kv_in, (d_kv_in, d)),
        bk=Tensor(np.zeros(d), requires_grad=True),
        wv=_uniform(rng, d_kv_in, (d_kv_in, d)),
        bv=Tensor(np.zeros(d), requires_grad=True),
        wo=_uniform(rng, d, (d, d)),
        bo=Tensor(np.zeros(d), requires_grad=True),
    )


def init_encoder_layer(
    d: int, d_ff: int, rng: np.random.Generator, d_kv_in: Optional[int] = None
) -> EncoderLayerParams:
    return EncoderLayerParams(
        attn=init_attention(d, rng, d_kv_in=d_kv_in),
        norm1_gamma=Tensor(np.ones(d), requires_grad=True),
        norm1_beta=Tensor(np.zeros(d), requires_grad=True),
        ffn_w1=_uniform(rng, d, (d, d_ff)),
        ffn_b1=Tensor(np.zeros(d_ff), requires_grad=True),
        ffn_w2=_uniform(rng, d_ff, (d_ff, d)),
        ffn_b2=Tensor(np.zeros(d), requires_grad=True),
        norm2_gamma=Tensor(np.ones(d), requires_grad=True),
        norm2_beta=Tensor(np.zeros(d), requires_grad=True),
    )


def concat_features(streams: Sequence) -> Tensor:
    """Frame-wise concatenation of embedded streams, in registry order."""
    if not streams:
        raise LengthMismatch("need at least one stream")
    ts = [s if isinstance(s, Tensor) else Tensor(s) for s in streams]
    lengths = {t.shape[-2] for t in ts}
    if len(lengths) != 1:
        raise LengthMismatch(f"streams disagree on frame count: {sorted(lengths)}")
    if len(ts) == 1:
        return ts[0]
    return concat(ts, axis=-1)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., T, d) -> (..., n_heads, T, d/n_heads)."""
    *lead, t, d = x.shape
    y = reshape(x, (*lead, t, n_heads, d // n_heads))
    m = y.ndim
    return transpose(y, (*range(m - 3), m - 2, m - 3, m - 1))


def _merge_heads(x: Tensor) -> Tensor:
    """(..., n_heads, T, d_h) -> (..., T, n_heads*d_h)."""
    m = x.ndim
    y = transpose(x, (*range(m - 3), m - 2, m - 3, m - 1))
    *lead, t, h, dh = y.shape
    return reshape(y, (*lead, t, h * dh))


def multi_head_attention(
    x: Tensor, params: AttentionParams, n_heads: int, kv: Optional[Tensor] = None
) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention; self-attention unless kv is given.

    x: (..., T, d) queries. kv, when present, supplies keys and values
    (its last dim must match params.wk/wv input width). Returns the
    output-projected context and the detached attention weights,
    (..., n_heads, T, T_kv).
    """
    d = x.shape[-1]
    if d % n_heads != 0:
        raise ValueError(f"model width {d} not divisible by n_heads={n_heads}")
    src = x if kv is None else kv
    q = _split_heads(add(matmul(x, params.wq), params.bq), n_heads)
    k = _split_heads(add(matmul(src, params.wk), params.bk), n_heads)
    v = _split_heads(add(matmul(src, params.wv), params.bv), n_heads)
    d_h = d // n_heads
    scores = scale(matmul(q, transpose(k, (*range(k.ndim - 2), k.ndim - 1, k.ndim - 2))), 1.0 / math.sqrt(d_h))
    weights = softmax(scores, axis=-1)
    context = _merge_heads(matmul(weights, v))
    out = add(matmul(context, params.wo), params.bo)
    return out, weights.data.copy()


def encoder_layer(
    x: Tensor,
    params: EncoderLayerParams,
    n_heads: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    kv: Optional[Tensor] = None,
) -> tuple[Tensor, np.ndarray]:
    """Post-norm residual block: LN(x + MHA(x)) then LN(. + FFN(.))."""
    attn_out, weights = multi_head_attention(x, params.attn, n_heads, kv=kv)
    attn_out = dropout(attn_out, dropout_rate, training, rng)
    h = layer_norm(add(x, attn_out), params.norm1_gamma, params.norm1_beta)
    f = add(matmul(relu(add(matmul(h, params.ffn_w1), params.ffn_b1)), params.ffn_w2), params.ffn_b2)
    f = dropout(f, dropout_rate, training, rng)
    out = layer_norm(add(h, f), params.norm2_gamma, params.norm2_beta)
    return out, weights


def init_transformer(config: EncoderConfig, rng: np.random.Generator) -> list[EncoderLayerParams]:
    return [init_encoder_layer(config.d_in, config.d_ff, rng) for _ in range(config.n_layers)]


def transformer_encode(
    x,
    layers: Sequence[EncoderLayerParams],
    config: EncoderConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, AttentionWeights]:
    """Stack of self-attention encoder layers; identity when n_layers == 0."""
    if config.variant is not Variant.CLASSIC:
        raise ValueError("transformer_encode requires the classic variant")
    h = x if isinstance(x, Tensor) else Tensor(x)
    diag = AttentionWeights()
    for params in layers:
        h, w = encoder_layer(h, params, config.n_heads, config.dropout, training, rng)
        diag.layers.append(w)
    return h, diag


def init_temma(
    n_streams: int, config: EncoderConfig, rng: np.random.Generator
) -> list[list[EncoderLayerParams]]:
    """Per block, one layer-parameter set per stream; keys/values read the
    full cross-stream concatenation."""
    d_kv_in = n_streams * config.d_in
    return [
        [init_encoder_layer(config.d_in, config.d_ff, rng, d_kv_in=d_kv_in) for _ in range(n_streams)]
        for _ in range(config.n_layers)
    ]


def temma_encode(
    streams: Sequence,
    blocks: Sequence[Sequence[EncoderLayerParams]],
    config: EncoderConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, AttentionWeights]:
    """Multimodal encoder over per-stream embeddings.

    In every block each stream attends over the frame-wise concatenation
    of all streams, then runs its own residual/norm/FFN update. After the
    last block the streams are concatenated, giving (..., T, m * d_in).
    With a single stream this reduces to the classic self-attention stack.
    """
    if config.variant is not Variant.TEMMA:
        raise ValueError("temma_encode requires the temma variant")
    hs = [s if isinstance(s, Tensor) else Tensor(s) for s in streams]
    if not hs:
        raise LengthMismatch("need at least one stream")
    diag = AttentionWeights()
    for block in blocks:
        if len(block) != len(hs):
            raise ValueError(f"block has {len(block)} stream params, got {len(hs)} streams")
        ctx = concat_features(hs)
        nxt = []
        per_stream = []
        for h, params in zip(hs, block):
            out, w = encoder_layer(h, params, config.n_heads, config.dropout, training, rng, kv=ctx)
            nxt.append(out)
            per_stream.append(w)
        hs = nxt
        diag.layers.append(per_stream)
    return concat_features(hs), diag
