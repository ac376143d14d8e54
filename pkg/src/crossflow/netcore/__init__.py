from .kernels import BACKEND
from .model import (
    AdamState,
    GradCheckReport,
    LayerParams,
    ModelParams,
    NetSpec,
    TrainConfig,
    TrainTrace,
    adam_step,
    backward_batch,
    forward,
    forward_batch,
    gradient_check,
    init_params,
    load_checkpoint,
    loss_and_grad,
    mae_loss,
    predict,
    save_checkpoint,
    spec_of,
    train,
)

__all__ = [
    "AdamState",
    "BACKEND",
    "GradCheckReport",
    "LayerParams",
    "ModelParams",
    "NetSpec",
    "TrainConfig",
    "TrainTrace",
    "adam_step",
    "backward_batch",
    "forward",
    "forward_batch",
    "gradient_check",
    "init_params",
    "load_checkpoint",
    "loss_and_grad",
    "mae_loss",
    "predict",
    "save_checkpoint",
    "spec_of",
    "train",
]
