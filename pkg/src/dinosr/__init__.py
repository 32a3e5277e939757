"""DinoSR: masked self-distillation with online clustering, on numpy."""
from .config import ConfigError, RunConfig
from .estimator import DinoSR, OnlineClustering
from .model import ModelConfig
from .trainer import DivergenceError, TrainConfig, TrainState, init_train_state, load_checkpoint, pretrain, save_checkpoint

__all__ = [
    "ConfigError",
    "DinoSR",
    "DivergenceError",
    "ModelConfig",
    "OnlineClustering",
    "RunConfig",
    "TrainConfig",
    "TrainState",
    "init_train_state",
    "load_checkpoint",
    "pretrain",
    "save_checkpoint",
]
__version__ = "0.1.0"
