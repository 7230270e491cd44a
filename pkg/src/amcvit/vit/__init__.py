"""From-scratch Vision Transformer: model, optimizer, checkpoints and training."""

from amcvit.vit.checkpoint import Checkpoint, EpochRecord, load_checkpoint, save_checkpoint
from amcvit.vit.model import (
    HEAD_NAMES,
    ParameterSet,
    ViTConfig,
    attention,
    backward,
    cross_entropy,
    embed,
    encoder_layer,
    forward,
    gelu,
    init_params,
    patchify,
)
from amcvit.vit.optim import AdamState, adam_step
from amcvit.vit.train import ImageSet, Prediction, TrainConfig, evaluate, fine_tune, predict, train

__all__ = [
    "HEAD_NAMES", "AdamState", "Checkpoint", "EpochRecord", "ImageSet", "ParameterSet", "Prediction",
    "TrainConfig", "ViTConfig", "adam_step", "attention", "backward", "cross_entropy", "embed",
    "encoder_layer", "evaluate", "fine_tune", "forward", "gelu", "init_params", "load_checkpoint",
    "patchify", "predict", "save_checkpoint", "train",
]
