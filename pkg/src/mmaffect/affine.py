"""Projection of heterogeneous feature streams to a shared width.

Feature extractors emit anything from 17 to 2048 dimensions per frame;
mixing them raw lets wide features drown out narrow ones. Each stream
gets its own learned affine map to d_model, plus additive sinusoidal
positional information. A stacked temporal-convolution variant provides
the input block for the multimodal (per-video regression) path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, conv1d, matmul, relu, transpose

CONV_EMBED_LAYERS = 5
CONV_EMBED_KERNEL = 3


class OddModelDim(ValueError):
    """Sinusoidal encoding interleaves sin/cos pairs, so d_model must be even."""


def sinusoidal_pe(length: int, d_model: int) -> np.ndarray:
    """Positional encoding matrix, shape (length, d_model).

    Even columns carry sin(pos / 10000^(2i/d_model)), odd columns the cos
    of the same angle. Deterministic, not learned.
    """
    if d_model % 2 != 0:
        raise OddModelDim(f"d_model must be even, got {d_model}")
    if length < 1 or d_model < 2:
        raise ValueError(f"need length >= 1 and d_model >= 2, got {length}, {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    angle = pos * freq
    pe = np.empty((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


@dataclass
class AffineParams:
    """Learned projection for one feature stream.

    weight: (d_model, in_dim), bias: (d_model,). Typical d_model settings
    are 256 or 512; anything even works and tests scale it down.
    """

    weight: Tensor
    bias: Tensor

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def d_model(self) -> int:
        return self.weight.shape[0]


def init_affine(in_dim: int, d_model: int, rng: np.random.Generator) -> AffineParams:
    """Fan-in uniform weights keep pre-PE activations O(1); zero bias."""
    bound = 1.0 / math.sqrt(in_dim)
    weight = Tensor(rng.uniform(-bound, bound, size=(d_model, in_dim)), requires_grad=True)
    bias = Tensor(np.zeros(d_model), requires_grad=True)
    return AffineParams(weight=weight, bias=bias)


def affine_project(features, params: AffineParams, pe: np.ndarray) -> Tensor:
    """Row-wise affine map plus positional encoding: (W f + b) + PE.

    features: (..., T, in_dim); pe: (T, d_model). Differentiable with
    respect to the features and both parameters.
    """
    projected = add(matmul(features, transpose(params.weight)), params.bias)
    return add(projected, pe)


@dataclass
class ConvEmbedParams:
    """Five stacked same-padding temporal conv layers (kernel size 3).

    layers: tuple of (kernels, bias) pairs; kernels (C_out, C_in, 3).
    """

    layers: tuple[tuple[Tensor, Tensor], ...]

    def __post_init__(self) -> None:
        if len(self.layers) != CONV_EMBED_LAYERS:
            raise ValueError(f"conv embed stack must have {CONV_EMBED_LAYERS} layers, got {len(self.layers)}")
        for kernels, _ in self.layers:
            if kernels.shape[-1] != CONV_EMBED_KERNEL:
                raise ValueError(f"conv embed kernel size must be {CONV_EMBED_KERNEL}, got {kernels.shape[-1]}")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def d_model(self) -> int:
        return self.layers[-1][0].shape[0]


def init_conv_embed(in_dim: int, d_model: int, rng: np.random.Generator) -> ConvEmbedParams:
    """Widths go in_dim -> d_model on the first layer, then stay at d_model.

    Hidden layers use relu-gain (He) uniform bounds, the linear output
    layer variance-preserving bounds; anything weaker attenuates the
    signal to noise level across five stacked layers.
    """
    layers = []
    c_in = in_dim
    for i in range(CONV_EMBED_LAYERS):
        fan_in = c_in * CONV_EMBED_KERNEL
        gain = 6.0 if i < CONV_EMBED_LAYERS - 1 else 3.0
        bound = math.sqrt(gain / fan_in)
        kernels = Tensor(rng.uniform(-bound, bound, size=(d_model, c_in, CONV_EMBED_KERNEL)), requires_grad=True)
        bias = Tensor(np.zeros(d_model), requires_grad=True)
        layers.append((kernels, bias))
        c_in = d_model
    return ConvEmbedParams(layers=tuple(layers))


def conv_embed(features, params: ConvEmbedParams, pe: np.ndarray) -> Tensor:
    """Length-preserving conv-stack embedding plus positional encoding.

    ReLU between layers; the final layer stays linear so the embedding
    is not sign-constrained.
    """
    h = features
    last = len(params.layers) - 1
    for i, (kernels, bias) in enumerate(params.layers):
        h = conv1d(h, kernels, bias)
        if i < last:
            h = relu(h)
    return add(h, pe)
