from .data import Dataset, DatasetError, load_dataset, read_image, to_unit, write_image
from .losses import LossWeights, feature_distance, loss_distance, rgan_losses, ssim_value
from .model import base_forward, coarse_payload, synthesize_from_payload, synthesize_images
from .evaluation import CSV_COLUMNS, SweepGrid, SweepReport, delta, evaluate, sweep
from .train import (
    Adam,
    ConfigError,
    TrainConfig,
    TrainingDivergedError,
    learning_rate,
    project_gdn,
    retrain_lowdata,
    train_base,
    train_joint,
    train_residual,
)
from .transmit import TransmitResult, receive, transmit_image

__all__ = [
    "Adam", "CSV_COLUMNS", "ConfigError", "Dataset", "DatasetError", "LossWeights", "SweepGrid",
    "SweepReport", "TrainConfig", "TrainingDivergedError", "TransmitResult", "base_forward",
    "coarse_payload", "delta", "evaluate", "feature_distance", "learning_rate", "load_dataset",
    "loss_distance", "project_gdn", "read_image", "receive", "retrain_lowdata", "rgan_losses",
    "ssim_value", "sweep", "synthesize_from_payload", "synthesize_images", "to_unit", "train_base",
    "train_joint", "train_residual", "transmit_image", "write_image",
]
