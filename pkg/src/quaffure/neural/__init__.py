"""Neural deformation decoder trained from the physics loss."""
from .decoder import DecoderNet, GroomEmbedding
from .infer import DrapeModel, InferenceResult, infer_batch, infer_drape
from .mlp import MLP
from .sampler import PoseSampler, PoseWindow
from .train import (
    PhysicsLoss,
    TrainConfig,
    TrainResult,
    TrainState,
    build_model,
    check_checkpoint,
    load_checkpoint,
    read_train_log,
    save_checkpoint,
    train_decoder,
    train_step,
    zero_checkpoint,
)

__all__ = [
    "MLP", "DecoderNet", "GroomEmbedding", "PoseSampler", "PoseWindow",
    "TrainConfig", "TrainState", "TrainResult", "PhysicsLoss", "build_model", "train_step", "train_decoder",
    "save_checkpoint", "load_checkpoint", "check_checkpoint", "zero_checkpoint", "read_train_log",
    "DrapeModel", "InferenceResult", "infer_drape", "infer_batch",
]
