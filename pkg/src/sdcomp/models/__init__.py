"""Depth-completion networks, the pose network, training and inference."""

from .networks import (
    BadResolution,
    DepthCompletionNetwork,
    ModelConfig,
    PoseNetwork,
)
from .specs import (
    DECODER,
    POSE_NETWORK,
    VGG8_ENCODER,
    VGG11_ENCODER,
    LayerSpec,
    RowAudit,
    audit_architecture,
    audit_rows,
    encoder_rows,
    matches_displayed,
    total_parameters,
)
from .training import (
    Adam,
    DivergedLoss,
    TrainConfig,
    TrainingSample,
    TrainResult,
    infer,
    load_checkpoint,
    save_checkpoint,
    scaffold_input,
    train,
)

__all__ = [
    "Adam",
    "BadResolution",
    "DECODER",
    "DepthCompletionNetwork",
    "DivergedLoss",
    "LayerSpec",
    "ModelConfig",
    "POSE_NETWORK",
    "PoseNetwork",
    "RowAudit",
    "TrainConfig",
    "TrainResult",
    "TrainingSample",
    "VGG11_ENCODER",
    "VGG8_ENCODER",
    "audit_architecture",
    "audit_rows",
    "encoder_rows",
    "infer",
    "load_checkpoint",
    "matches_displayed",
    "save_checkpoint",
    "scaffold_input",
    "total_parameters",
    "train",
]
