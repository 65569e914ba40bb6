"""Deterministic numpy sequence-model engine (LSTM, BiLSTM, additive attention)."""

from .layers import (
    ShapeError,
    additive_attention,
    bilstm_forward,
    dropout_mask,
    lstm_cell_forward,
    lstm_forward,
    softmax,
)
from .model import (
    VARIANTS,
    ModelSpec,
    backward,
    count_parameters,
    forward,
    init_params,
    loss_and_grads,
    mse_loss,
    param_layout,
    predict,
)
from .optim import AdamState, EarlyStopping, NonFiniteError, ReduceLROnPlateau, adam_step
from .train import TrainConfig, TrainedModel, TrainingError, load_checkpoint, save_checkpoint, train

__all__ = [
    "AdamState",
    "EarlyStopping",
    "ModelSpec",
    "NonFiniteError",
    "ReduceLROnPlateau",
    "ShapeError",
    "TrainConfig",
    "TrainedModel",
    "TrainingError",
    "VARIANTS",
    "adam_step",
    "additive_attention",
    "backward",
    "bilstm_forward",
    "count_parameters",
    "dropout_mask",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss_and_grads",
    "lstm_cell_forward",
    "lstm_forward",
    "mse_loss",
    "param_layout",
    "predict",
    "save_checkpoint",
    "softmax",
    "train",
]
