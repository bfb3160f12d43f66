"""Python access to the lcsd C++ core."""

from ._core import (
    EMBED_DIM,
    CorruptCheckpoint,
    DatasetError,
    Run,
    VersionError,
    checkpoint_from_bytes,
    cli,
    config_keys,
    ddim_timesteps,
    default_config,
    embed,
    evaluate,
    evaluate_expert,
    generate_dataset_jsonl,
    load_checkpoint,
    mi_estimate,
    nearest_code,
    noise_schedule,
    tokenize,
    train,
)

__all__ = [
    "EMBED_DIM",
    "CorruptCheckpoint",
    "DatasetError",
    "Run",
    "VersionError",
    "checkpoint_from_bytes",
    "cli",
    "config_keys",
    "ddim_timesteps",
    "default_config",
    "embed",
    "evaluate",
    "evaluate_expert",
    "generate_dataset_jsonl",
    "load_checkpoint",
    "mi_estimate",
    "nearest_code",
    "noise_schedule",
    "tokenize",
    "train",
]
