"""Prompt-fused frozen-transformer models for time series, on a small numpy autodiff engine."""

from .backbone import BackboneConfig, FrozenBackbone, init_frozen_backbone
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .fatm import FATM
from .kdtp import build_index, build_prompt, describe_series, retrieve
from .model import PromptFusionModel
from .series import NormStats, TimeSeries, load_csv, segment, synth_series
from .training import MetricsReport, evaluate, prepare_data, run_ablation, run_experiment, train

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "FrozenBackbone", "init_frozen_backbone", "load_checkpoint",
    "save_checkpoint", "ExperimentConfig", "load_config", "FATM", "build_index", "build_prompt",
    "describe_series", "retrieve", "PromptFusionModel", "NormStats", "TimeSeries", "load_csv",
    "segment", "synth_series", "MetricsReport", "evaluate", "prepare_data", "run_ablation",
    "run_experiment", "train",
]
