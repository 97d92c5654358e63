"""Task heads and the four task losses.

The head is a frame-wise affine map onto the task's output width (2, 8,
12, or 7). The per-video regression head pools frames first and runs a
small hidden layer. Losses consume only annotated frames/entries; frames
masked out upstream never enter the graph, so perturbing them cannot
change a loss bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import (
    ShapeMismatch,
    Tensor,
    add,
    clip,
    dropout,
    log,
    log_softmax,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    relu,
    scale,
    sigmoid,
    sub,
    take_rows,
    transpose,
)
from .core import AU_COUNT, ERI_DIMS, EXPR_CLASSES, INVALID, Task

PROB_EPS = 1e-7  # keeps log terms finite for saturated probabilities

OUT_DIMS = {Task.VA: 2, Task.EXPR: EXPR_CLASSES, Task.AU: AU_COUNT, Task.ERI: ERI_DIMS}


class NoValidFrames(ValueError):
    """Every frame in the batch is masked out."""


class ZeroOccurrence(ValueError):
    """An action unit never occurs in the training labels."""


@dataclass
class HeadParams:
    """Affine output map; the pooled path adds a hidden layer + dropout."""

    task: Task
    weight: Tensor  # (out_dim, d_t)
    bias: Tensor    # (out_dim,)
    hidden_weight: Optional[Tensor] = None  # (hidden, d_t) on the pooled path
    hidden_bias: Optional[Tensor] = None
    hidden_dropout: float = 0.2


def init_head(
    task: Task,
    d_t: int,
    rng: np.random.Generator,
    hidden: Optional[int] = None,
    hidden_dropout: float = 0.2,
) -> HeadParams:
    out_dim = OUT_DIMS[task]
    hw = hb = None
    d_in = d_t
    if hidden is not None:
        bound = 1.0 / math.sqrt(d_t)
        hw = Tensor(rng.uniform(-bound, bound, size=(hidden, d_t)), requires_grad=True)
        hb = Tensor(np.zeros(hidden), requires_grad=True)
        d_in = hidden
    bound = 1.0 / math.sqrt(d_in)
    weight = Tensor(rng.uniform(-bound, bound, size=(out_dim, d_in)), requires_grad=True)
    bias = Tensor(np.zeros(out_dim), requires_grad=True)
    return HeadParams(task=task, weight=weight, bias=bias, hidden_weight=hw, hidden_bias=hb, hidden_dropout=hidden_dropout)


def output_layer(
    t,
    params: HeadParams,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Map temporal features (..., T, d_t) to raw task outputs.

    Frame tasks return (..., T, out_dim) logits/values. The per-video task
    mean-pools over frames first, so it returns (..., 1, out_dim).
    Inference transforms (clamping, logistic, argmax) are applied by
    `predict`, not here, so training sees raw outputs.
    """
    h = t if isinstance(t, Tensor) else Tensor(t)
    if params.task is Task.ERI:
        h = reduce_mean(h, axis=-2, keepdims=True)
        if params.hidden_weight is not None:
            h = relu(add(matmul(h, transpose(params.hidden_weight)), params.hidden_bias))
            h = dropout(h, params.hidden_dropout, training, rng)
    return add(matmul(h, transpose(params.weight)), params.bias)


def predict(raw: np.ndarray, task: Task) -> np.ndarray:
    """Inference-time transform of raw head outputs.

    VA: clamp to [-1, 1]. Expr: argmax class ids. AU/ERI: logistic
    probabilities/intensities.
    """
    if task is Task.VA:
        return np.clip(raw, -1.0, 1.0)
    if task is Task.EXPR:
        return np.argmax(raw, axis=-1)
    z = np.empty_like(raw)
    pos = raw >= 0
    z[pos] = 1.0 / (1.0 + np.exp(-raw[pos]))
    e = np.exp(raw[~pos])
    z[~pos] = e / (1.0 + e)
    return z


def _valid_indices(mask: np.ndarray) -> np.ndarray:
    idx = np.nonzero(np.asarray(mask, dtype=bool))[0]
    if idx.size == 0:
        raise NoValidFrames("no annotated frames in batch")
    return idx


def mse_va(y: np.ndarray, pred: Tensor, mask: np.ndarray) -> Tensor:
    """Mean squared error over valid frames, averaged over both dimensions."""
    y = np.asarray(y, dtype=np.float64)
    idx = _valid_indices(mask)
    diff = sub(take_rows(pred, idx), y[idx])
    return scale(reduce_sum(mul(diff, diff)), 1.0 / (idx.size * y.shape[1]))


def ce_expr(y: np.ndarray, logits: Tensor) -> Tensor:
    """Cross entropy against integer classes; -1 frames are skipped.

    Normalized by the number of annotated frames so the magnitude does
    not scale with batch size.
    """
    y = np.asarray(y, dtype=np.int64)
    idx = _valid_indices(y != INVALID)
    lsm = log_softmax(take_rows(logits, idx), axis=-1)
    onehot = np.zeros((idx.size, logits.shape[-1]))
    onehot[np.arange(idx.size), y[idx]] = 1.0
    return scale(reduce_sum(mul(lsm, onehot)), -1.0 / idx.size)


@dataclass(frozen=True)
class AUWeights:
    """Per-AU loss weights from training-set occurrence rates.

    Inverse occurrence, normalized so the weights sum to the number of
    AUs (uniform rates give all-ones).
    """

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if np.any(w <= 0):
            raise ValueError("AU weights must be positive")
        if not math.isclose(float(w.sum()), float(w.size), rel_tol=1e-9):
            raise ValueError(f"AU weights must sum to {w.size}, got {w.sum()}")
        object.__setattr__(self, "w", w)


def compute_au_weights(labels: np.ndarray) -> AUWeights:
    """Occurrence-rate weights from a training label matrix (N, n_au).

    Rate r_i counts positives among annotated entries of AU i; the weight
    is 1/r_i, rescaled to sum to n_au.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_au = labels.shape[1]
    rates = np.empty(n_au)
    for i in range(n_au):
        col = labels[:, i]
        valid = col != INVALID
        n_valid = int(valid.sum())
        positives = int((col[valid] == 1).sum())
        if n_valid == 0 or positives == 0:
            raise ZeroOccurrence(f"AU {i} has no positive annotated frames")
        rates[i] = positives / n_valid
    inv = 1.0 / rates
    return AUWeights(w=inv * (n_au / inv.sum()))


def weighted_asym_loss(y: np.ndarray, probs: Tensor, weights) -> Tensor:
    """Weighted asymmetric multi-label loss over annotated entries.

    Per valid frame, sums w_i [y_i log p_i + (1 - y_i) p_i log(1 - p_i)]
    over the AUs (note the extra p factor on the negative term), negates,
    and averages over valid frames. Entries labeled -1 are excluded;
    probabilities must already be clamped inside (0, 1). `weights` is an
    AUWeights or any positive per-AU vector (the loss is linear in it).
    """
    w = weights.w if isinstance(weights, AUWeights) else np.asarray(weights, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    entry_mask = (y != INVALID).astype(np.float64)
    idx = _valid_indices(entry_mask.any(axis=1))
    p = take_rows(probs, idx)
    ym = np.where(y[idx] == INVALID, 0.0, y[idx])
    pos = mul(ym, log(p))
    neg = mul((1.0 - ym), mul(p, log(sub(1.0, p))))
    terms = mul(add(pos, neg), w * entry_mask[idx])
    return scale(reduce_sum(terms), -1.0 / idx.size)


def mse_eri(y: np.ndarray, pred: Tensor) -> Tensor:
    """Mean squared error over all reaction dimensions and videos."""
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ShapeMismatch(f"eri labels {y.shape} vs predictions {pred.shape}")
    diff = sub(pred, y)
    return scale(reduce_sum(mul(diff, diff)), 1.0 / y.size)


def au_probabilities(logits: Tensor) -> Tensor:
    """Logistic probabilities clamped away from {0, 1} for finite logs."""
    return clip(sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
