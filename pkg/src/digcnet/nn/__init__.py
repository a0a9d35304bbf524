"""Differentiable-computation core: tensors, layers, losses, Adam, checkpoints."""

from .tensor import Tensor, concat, zeros, assert_all_finite
from .layers import activate, dense, gcn_layer, lstm_step, rnn_step, dropout, xavier_uniform
from .losses import bce_loss, mse_loss, mape, f1_score, precision_recall_f1, BCE_EPS
from .optim import ModelParams, Adam
from .checkpoint import save_params, load_params
from .gradcheck import gradient_check, max_relative_error

__all__ = [
    "Tensor", "concat", "zeros", "assert_all_finite",
    "activate", "dense", "gcn_layer", "lstm_step", "rnn_step", "dropout", "xavier_uniform",
    "bce_loss", "mse_loss", "mape", "f1_score", "precision_recall_f1", "BCE_EPS",
    "ModelParams", "Adam",
    "save_params", "load_params",
    "gradient_check", "max_relative_error",
]
