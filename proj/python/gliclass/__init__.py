"""Label-conditioned sequence classification: desk-scale encoder, RL fine-tuning,
synthetic data and a throughput benchmark, all backed by the C++ core."""

from ._core import (
    ConfigError,
    ContractError,
    DataError,
    Model,
    NumericError,
    apply_lora,
    benchmark,
    evaluate,
    generate,
    load_dataset,
    merge_lora,
    save_dataset,
    theme_names,
    train_ppo,
    train_supervised,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "Model",
    "NumericError",
    "apply_lora",
    "benchmark",
    "evaluate",
    "generate",
    "load_dataset",
    "merge_lora",
    "save_dataset",
    "theme_names",
    "train_ppo",
    "train_supervised",
]
