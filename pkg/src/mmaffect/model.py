"""Model assembly: configuration, parameter set, forward pass, task loss.

The pipeline is: per-feature embedding to d_model (affine map for frame
tasks, conv stack for the per-video task), positional encoding, temporal
encoder (classic self-attention over the concatenation, or the
multimodal per-stream variant), then the task head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .affine import (
    AffineParams,
    ConvEmbedParams,
    affine_project,
    conv_embed,
    init_affine,
    init_conv_embed,
    sinusoidal_pe,
)
from .autodiff import Tensor, make_rng, reshape, sigmoid
from .core import FeatureDescriptor, FeatureRegistry, Task
from .encoder import (
    EncoderConfig,
    EncoderLayerParams,
    Variant,
    concat_features,
    init_temma,
    init_transformer,
    temma_encode,
    transformer_encode,
)
from .heads import (
    AUWeights,
    HeadParams,
    au_probabilities,
    ce_expr,
    init_head,
    mse_eri,
    mse_va,
    output_layer,
    weighted_asym_loss,
)


@dataclass
class ModelConfig:
    """Architecture description, fully determined by task + registry + knobs."""

    task: Task
    features: tuple[FeatureDescriptor, ...]
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    dropout: Optional[float] = None   # default 0.2 on the pooled path, 0.1 otherwise
    variant: Optional[Variant] = None  # default: TEMMA for ERI, classic otherwise
    head_hidden: int = 256

    def __post_init__(self) -> None:
        if isinstance(self.features, FeatureRegistry):
            self.features = tuple(self.features)
        else:
            self.features = tuple(self.features)
        if not self.features:
            raise ValueError("model needs at least one feature stream")
        if self.variant is None:
            self.variant = Variant.TEMMA if self.task is Task.ERI else Variant.CLASSIC
        if self.dropout is None:
            self.dropout = 0.2 if self.variant is Variant.TEMMA else 0.1

    @property
    def n_streams(self) -> int:
        return len(self.features)

    @property
    def d_t(self) -> int:
        """Width of the encoder output seen by the head."""
        return self.n_streams * self.d_model

    def encoder_config(self) -> EncoderConfig:
        d_in = self.d_model if self.variant is Variant.TEMMA else self.d_t
        return EncoderConfig(
            d_in=d_in,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            dropout=self.dropout,
            variant=self.variant,
        )

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "features": [[d.name, d.modality.value, d.dim] for d in self.features],
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "dropout": self.dropout,
            "variant": self.variant.value,
            "head_hidden": self.head_hidden,
        }


@dataclass
class ModelParams:
    """Every learnable tensor in the pipeline, addressable by name."""

    embed_affine: dict[str, AffineParams] = field(default_factory=dict)
    embed_conv: dict[str, ConvEmbedParams] = field(default_factory=dict)
    encoder_layers: list[EncoderLayerParams] = field(default_factory=list)
    temma_blocks: list[list[EncoderLayerParams]] = field(default_factory=list)
    head: Optional[HeadParams] = None

    def named(self) -> list[tuple[str, Tensor]]:
        """Deterministically ordered (name, tensor) pairs."""
        out: list[tuple[str, Tensor]] = []
        for name, p in self.embed_affine.items():
            out.append((f"embed.{name}.weight", p.weight))
            out.append((f"embed.{name}.bias", p.bias))
        for name, p in self.embed_conv.items():
            for i, (kernels, bias) in enumerate(p.layers):
                out.append((f"embed.{name}.conv{i}.kernels", kernels))
                out.append((f"embed.{name}.conv{i}.bias", bias))
        def layer_entries(prefix: str, lp: EncoderLayerParams):
            a = lp.attn
            return [
                (f"{prefix}.attn.wq", a.wq), (f"{prefix}.attn.bq", a.bq),
                (f"{prefix}.attn.wk", a.wk), (f"{prefix}.attn.bk", a.bk),
                (f"{prefix}.attn.wv", a.wv), (f"{prefix}.attn.bv", a.bv),
                (f"{prefix}.attn.wo", a.wo), (f"{prefix}.attn.bo", a.bo),
                (f"{prefix}.norm1.gamma", lp.norm1_gamma), (f"{prefix}.norm1.beta", lp.norm1_beta),
                (f"{prefix}.ffn.w1", lp.ffn_w1), (f"{prefix}.ffn.b1", lp.ffn_b1),
                (f"{prefix}.ffn.w2", lp.ffn_w2), (f"{prefix}.ffn.b2", lp.ffn_b2),
                (f"{prefix}.norm2.gamma", lp.norm2_gamma), (f"{prefix}.norm2.beta", lp.norm2_beta),
            ]
        for i, lp in enumerate(self.encoder_layers):
            out.extend(layer_entries(f"encoder.{i}", lp))
        for b, block in enumerate(self.temma_blocks):
            for s, lp in enumerate(block):
                out.extend(layer_entries(f"temma.{b}.s{s}", lp))
        if self.head is not None:
            if self.head.hidden_weight is not None:
                out.append(("head.hidden.weight", self.head.hidden_weight))
                out.append(("head.hidden.bias", self.head.hidden_bias))
            out.append(("head.weight", self.head.weight))
            out.append(("head.bias", self.head.bias))
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]


def build_model(config: ModelConfig, seed: int) -> ModelParams:
    """Initialize all parameters from the named init stream of `seed`."""
    rng = make_rng(seed, "init")
    params = ModelParams()
    enc_cfg = config.encoder_config()
    if config.variant is Variant.CLASSIC:
        for desc in config.features:
            params.embed_affine[desc.name] = init_affine(desc.dim, config.d_model, rng)
        params.encoder_layers = init_transformer(enc_cfg, rng)
        params.head = init_head(config.task, config.d_t, rng)
    else:
        for desc in config.features:
            params.embed_conv[desc.name] = init_conv_embed(desc.dim, config.d_model, rng)
        params.temma_blocks = init_temma(config.n_streams, enc_cfg, rng)
        hidden = config.head_hidden if config.task is Task.ERI else None
        params.head = init_head(config.task, config.d_t, rng, hidden=hidden, hidden_dropout=config.dropout)
    return params


def forward(
    params: ModelParams,
    config: ModelConfig,
    features: Sequence[np.ndarray],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Raw head outputs for one batch.

    features: one array per registered stream, each (T, D_i) or
    (B, T, D_i) with a shared T. Returns (..., T, out_dim) for frame
    tasks and (..., 1, out_dim) for the per-video task.
    """
    if len(features) != config.n_streams:
        raise ValueError(f"expected {config.n_streams} feature streams, got {len(features)}")
    t = features[0].shape[-2]
    pe = sinusoidal_pe(t, config.d_model)
    enc_cfg = config.encoder_config()
    if config.variant is Variant.CLASSIC:
        embedded = [
            affine_project(f, params.embed_affine[d.name], pe)
            for f, d in zip(features, config.features)
        ]
        h = concat_features(embedded)
        encoded, _ = transformer_encode(h, params.encoder_layers, enc_cfg, training, rng)
    else:
        streams = [
            conv_embed(f, params.embed_conv[d.name], pe)
            for f, d in zip(features, config.features)
        ]
        encoded, _ = temma_encode(streams, params.temma_blocks, enc_cfg, training, rng)
    return output_layer(encoded, params.head, training, rng)


def _flatten_frames(out: Tensor, out_dim: int) -> Tensor:
    """(..., T, out_dim) -> (N, out_dim) preserving frame order."""
    n = out.size // out_dim
    return reshape(out, (n, out_dim))


def task_loss(
    config: ModelConfig,
    raw: Tensor,
    labels_flat,
    mask_flat: Optional[np.ndarray] = None,
    au_weights: Optional[AUWeights] = None,
) -> Tensor:
    """Compose the task's loss with the head output.

    For frame tasks, `labels_flat`/`mask_flat` are the batch's frames
    flattened in the same order as the forward output. For the per-video
    task, `labels_flat` is (B, 7) against pooled predictions.
    """
    task = config.task
    if task is Task.VA:
        return mse_va(labels_flat, _flatten_frames(raw, 2), mask_flat)
    if task is Task.EXPR:
        return ce_expr(labels_flat, _flatten_frames(raw, raw.shape[-1]))
    if task is Task.AU:
        probs = au_probabilities(_flatten_frames(raw, raw.shape[-1]))
        if au_weights is None:
            raise ValueError("AU loss needs occurrence-rate weights")
        return weighted_asym_loss(labels_flat, probs, au_weights)
    labels = np.asarray(labels_flat, dtype=np.float64)
    pred = sigmoid(reshape(raw, labels.shape))
    return mse_eri(labels, pred)
