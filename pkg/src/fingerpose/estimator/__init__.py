"""Bimodal 2D pose estimator: network, training and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    Batch,
    BatchOutput,
    EstimatorModel,
    HeadOutput,
    NetConfig,
    batch_from_arrays,
    random_batch,
    batch_loss,
    decode_batch,
    forward,
    forward_batch,
    grad_check,
    gradients,
    init_model,
    loss,
    make_batch,
    predict_batch,
    predict_pose2d,
    tiny_config,
)
from .training import AdamW, History, TrainConfig, cosine_lr, evaluate, train

__all__ = [
    "AdamW", "Batch", "BatchOutput", "EstimatorModel", "HeadOutput", "History",
    "NetConfig", "TrainConfig", "batch_from_arrays", "batch_loss", "cosine_lr",
    "decode_batch", "evaluate", "forward", "forward_batch", "grad_check", "gradients",
    "init_model", "load_checkpoint", "loss", "make_batch", "predict_batch",
    "predict_pose2d", "random_batch", "save_checkpoint", "tiny_config", "train",
]
