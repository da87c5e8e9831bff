"""Desk-scale flux-guided super-resolution trainer."""

from .data import ToyDataset, ToySample, build_toy_dataset
from .losses import DEFAULT_LAMBDA, flux_weighted_loss, total_loss
from .model import (FluxGuidanceGenerator, GuidanceControlModule,
                    GuidanceController, PromptInteraction, ToyRestorer)
from .sfi import read_sfi, write_sfi
from .train import TrainConfig, TrainResult, TrainingDiverged, train_toy

__version__ = "0.1.0"
