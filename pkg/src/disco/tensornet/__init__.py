"""A small NHWC autodiff core: conv3x3, batch norm, ReLU, dropout, GAP, FC, L2, momentum SGD."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    BatchNormState,
    batchnorm,
    conv3x3,
    dropout,
    fully_connected,
    global_average_pool,
    l2_loss,
    relu,
    weighted_sum,
)
from .optim import SGD, sgd_step
from .tensor import Tensor, parameter

__all__ = [
    "BatchNormState", "GradCheckReport", "SGD", "Tensor", "batchnorm", "conv3x3", "dropout",
    "fully_connected", "global_average_pool", "grad_check", "l2_loss", "load_checkpoint",
    "parameter", "relu", "save_checkpoint", "sgd_step", "weighted_sum",
]
