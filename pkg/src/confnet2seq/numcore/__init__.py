"""Minimal float64 tensor core: reverse-mode autodiff, LSTM cell, optimizers
and checkpoint I/O."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .lstm import LstmLayer, init_lstm_layer, lstm_cell, run_bilstm, run_lstm, step_stack
from .optim import Optimizer, OptimizerConfig, clip_global_norm, decayed_learning_rate
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    clip_min,
    concat,
    dot,
    dropout,
    embedding_lookup,
    embedding_row,
    gather1d,
    log,
    matmul,
    mean_,
    mul,
    neg,
    scale,
    sigmoid,
    slice1d,
    softmax,
    stack_rows,
    sub,
    sum_,
    tanh,
    uniform_init,
    weighted_scatter,
    zeros,
)

__all__ = [
    "Checkpoint",
    "LstmLayer",
    "Optimizer",
    "OptimizerConfig",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "clip_global_norm",
    "clip_min",
    "concat",
    "decayed_learning_rate",
    "dot",
    "dropout",
    "embedding_lookup",
    "embedding_row",
    "gather1d",
    "init_lstm_layer",
    "load_checkpoint",
    "log",
    "lstm_cell",
    "matmul",
    "mean_",
    "mul",
    "neg",
    "run_bilstm",
    "run_lstm",
    "save_checkpoint",
    "scale",
    "sigmoid",
    "slice1d",
    "softmax",
    "stack_rows",
    "step_stack",
    "sub",
    "sum_",
    "tanh",
    "uniform_init",
    "weighted_scatter",
    "zeros",
]
