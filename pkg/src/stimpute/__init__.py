"""Probabilistic spatiotemporal imputation with a conditional diffusion model."""

from stimpute.data import Adjacency, DataError, SpatioTemporalWindow, build_adjacency, load_series, synthesize
from stimpute.diffusion import DiffusionSchedule, build_schedule, forward_sample, reverse_step, sample_imputation
from stimpute.engine import TrainConfig, impute_dataset, load_checkpoint, save_checkpoint, train
from stimpute.masking import EvalPattern, MaskPlan, StrategyConfig, simulate_eval_missing, training_mask
from stimpute.metrics import ImputationResult, crps, mae, mse
from stimpute.model import ModelConfig, NoisePredictor

__version__ = "0.1.0"

__all__ = [
    "Adjacency",
    "DataError",
    "DiffusionSchedule",
    "EvalPattern",
    "ImputationResult",
    "MaskPlan",
    "ModelConfig",
    "NoisePredictor",
    "SpatioTemporalWindow",
    "StrategyConfig",
    "TrainConfig",
    "build_adjacency",
    "build_schedule",
    "crps",
    "forward_sample",
    "impute_dataset",
    "load_checkpoint",
    "load_series",
    "mae",
    "mse",
    "reverse_step",
    "sample_imputation",
    "save_checkpoint",
    "simulate_eval_missing",
    "synthesize",
    "train",
    "training_mask",
]
