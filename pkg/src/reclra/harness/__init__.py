"""Experiment harness: configs, training loop, evaluation and CLI."""

from .config import ExperimentConfig, load_config, parse_layers
from .metrics import ConfusionReport, EvalResult, confusion_metrics, evaluate, export_latents
from .runner import DataSplits, RunResult, network_for, preprocess, prepare_data, train

__all__ = [
    "ConfusionReport", "DataSplits", "EvalResult", "ExperimentConfig", "RunResult",
    "confusion_metrics", "evaluate", "export_latents", "load_config", "network_for",
    "parse_layers", "preprocess", "prepare_data", "train",
]
