"""Desk-scale multimodal affect recognition.

Heterogeneous per-frame feature streams are projected to a shared width,
temporally encoded with a transformer (or a multimodal per-stream
variant), and mapped to one of four task outputs: valence/arousal,
expression class, action units, or per-video reaction intensities.
Training, evaluation metrics, binary feature files, and a synthetic
recoverable dataset generator are all included.
"""

from .core import (
    FeatureDescriptor,
    FeatureRegistry,
    FeatureSequence,
    Modality,
    Segment,
    Task,
    TaskLabels,
    align_lengths,
    default_feature_registry,
    validate_sequence,
)
from .autodiff import Tensor, backward, grad_check, make_rng
from .affine import affine_project, conv_embed, sinusoidal_pe
from .encoder import EncoderConfig, Variant, concat_features, temma_encode, transformer_encode
from .heads import compute_au_weights, ce_expr, mse_eri, mse_va, output_layer, weighted_asym_loss
from .metrics import EvalReport, au_macro_f1, ccc, macro_f1, mean_ccc, mean_pcc
from .dataio import SyntheticSpec, gen_synthetic, read_fseq, segment_video, write_fseq
from .model import ModelConfig, build_model, forward, task_loss
from .trainer import TrainConfig, adam_step, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "FeatureDescriptor",
    "FeatureRegistry",
    "FeatureSequence",
    "Modality",
    "Segment",
    "Task",
    "TaskLabels",
    "align_lengths",
    "default_feature_registry",
    "validate_sequence",
    "Tensor",
    "backward",
    "grad_check",
    "make_rng",
    "affine_project",
    "conv_embed",
    "sinusoidal_pe",
    "EncoderConfig",
    "Variant",
    "concat_features",
    "temma_encode",
    "transformer_encode",
    "compute_au_weights",
    "ce_expr",
    "mse_eri",
    "mse_va",
    "output_layer",
    "weighted_asym_loss",
    "EvalReport",
    "au_macro_f1",
    "ccc",
    "macro_f1",
    "mean_ccc",
    "mean_pcc",
    "SyntheticSpec",
    "gen_synthetic",
    "read_fseq",
    "segment_video",
    "write_fseq",
    "ModelConfig",
    "build_model",
    "forward",
    "task_loss",
    "TrainConfig",
    "adam_step",
    "evaluate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
