"""Identity/pose/expression disentanglement on procedural face images.

Thin Python surface over the C++ core: dataset generation, the individual
loss terms, the alternating training procedure, and evaluation/export.
"""

from ._core import (
    ConfigError,
    TrainError,
    assemble_generator_loss,
    build_dataset,
    compose,
    evaluate,
    export_embeddings,
    identity_params,
    load_dataset,
    loss_ce,
    loss_confusion,
    loss_cos,
    loss_recon,
    pose_bucket,
    pretrain_identity_encoder,
    render,
    synthesize,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "TrainError",
    "assemble_generator_loss",
    "build_dataset",
    "compose",
    "evaluate",
    "export_embeddings",
    "identity_params",
    "load_dataset",
    "loss_ce",
    "loss_confusion",
    "loss_cos",
    "loss_recon",
    "pose_bucket",
    "pretrain_identity_encoder",
    "render",
    "synthesize",
    "train",
]
