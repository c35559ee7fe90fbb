"""Continual learning with soft-masked parameter-level gradient flow."""

from ._core import (
    CheckpointError,
    ConfigError,
    DimensionError,
    IdxError,
    InvalidArgument,
    avg_accuracy,
    backward_transfer,
    cli,
    forward_transfer,
    layer_normalize,
    load_idx,
    make_stream,
    raw_importance,
    run_continual,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DimensionError",
    "IdxError",
    "InvalidArgument",
    "avg_accuracy",
    "backward_transfer",
    "cli",
    "forward_transfer",
    "layer_normalize",
    "load_idx",
    "make_stream",
    "raw_importance",
    "run_continual",
]
