"""Parallel magnitude and phase spectrum denoising for single-channel speech."""

from .dsp import SpectrumPair, StftConfig, Waveform, read_wav, write_wav
from .errors import (
    CheckpointError,
    ConfigError,
    InvalidInputError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from .losses import LossReport, LossWeights
from .network import MagPhaseGenerator, MetricDiscriminator, ModelConfig, count_parameters
from .trainer import TrainConfig, fit, load_generator

__version__ = "0.1.0"

__all__ = [
    "SpectrumPair",
    "StftConfig",
    "Waveform",
    "read_wav",
    "write_wav",
    "CheckpointError",
    "ConfigError",
    "InvalidInputError",
    "TrainingDivergedError",
    "UndefinedMetricError",
    "LossReport",
    "LossWeights",
    "MagPhaseGenerator",
    "MetricDiscriminator",
    "ModelConfig",
    "count_parameters",
    "TrainConfig",
    "fit",
    "load_generator",
    "__version__",
]
