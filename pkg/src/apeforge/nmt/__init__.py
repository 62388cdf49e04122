"""Attentional sequence-to-sequence model, training loop, and checkpoints."""

from .checkpoint import CheckpointError, load, save
from .model import (
    DecodeState,
    GradCheckEntry,
    GradCheckReport,
    InputError,
    Seq2SeqModel,
    forward,
    gradient_check,
    init_model,
)
from .training import (
    Adadelta,
    DivergenceError,
    LogEntry,
    TrainConfig,
    TrainResult,
    dev_loss,
    exact_accuracy,
    greedy_decode,
    train,
)

__all__ = [
    "Adadelta",
    "CheckpointError",
    "DecodeState",
    "DivergenceError",
    "GradCheckEntry",
    "GradCheckReport",
    "InputError",
    "LogEntry",
    "Seq2SeqModel",
    "TrainConfig",
    "TrainResult",
    "dev_loss",
    "exact_accuracy",
    "forward",
    "gradient_check",
    "greedy_decode",
    "init_model",
    "load",
    "save",
    "train",
]
