"""Experiment configuration, execution and command-line front end."""

from .config import ConfigError, ExperimentConfig, available_presets, load_config, load_preset

__all__ = ["ConfigError", "ExperimentConfig", "available_presets", "load_config", "load_preset"]
