"""Python access to the textbcs core (config, data generation, training, metrics, losses)."""

from ._core import (
    ConfigError,
    DataError,
    TrainingAborted,
    config_hash,
    default_config,
    dice_loss,
    dice_metric,
    dirichlet_stats,
    evaluate,
    generate_dataset,
    ice_loss,
    kl_to_uniform,
    lambda2_schedule,
    load_config,
    make_config,
    miou_metric,
    paired_t_test,
    render_prompt,
    tokenize,
    train,
    vocabulary,
)

__all__ = [
    "ConfigError",
    "DataError",
    "TrainingAborted",
    "config_hash",
    "default_config",
    "dice_loss",
    "dice_metric",
    "dirichlet_stats",
    "evaluate",
    "generate_dataset",
    "ice_loss",
    "kl_to_uniform",
    "lambda2_schedule",
    "load_config",
    "make_config",
    "miou_metric",
    "paired_t_test",
    "render_prompt",
    "tokenize",
    "train",
    "vocabulary",
]
