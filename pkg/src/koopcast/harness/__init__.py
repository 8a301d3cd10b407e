"""Experiment harness: configs, metrics and the ``koopcast`` command line."""

from koopcast.harness.config import ConfigError, ExperimentConfig, config_from_dict, load_config

__all__ = ["ConfigError", "ExperimentConfig", "config_from_dict", "load_config"]
