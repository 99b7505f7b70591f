"""Masked differential privacy: MaskDP-SGD training and its RDP accountant."""

from .accountant import (
    AccountingReport,
    CalibrationFloorWarning,
    CalibrationInfeasible,
    PrivacyBudget,
    SubsampledGaussianParams,
    calibrate_noise,
    compose_rdp,
    per_step_rdp,
    rdp_curve,
    rdp_to_dp,
    total_epsilon,
)
from .data import Dataset, GeneratorConfig, generate_split, generate_synthetic, masked_adjacent, read_dataset, tokenize, write_dataset
from .mechanism import RandomStreams, clip_to_norm, gaussian_noise, poisson_sample
from .model import ModelParams, forward, init_params, load_checkpoint, loss_and_grad, save_checkpoint
from .trainer import TrainConfig, TrainReport, evaluate, sweep, train

__version__ = "0.1.0"
