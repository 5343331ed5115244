from .checkpoint import load_checkpoint, save_checkpoint
from .data import AugmentSpec, SyntheticDataset, augment_pair, augment_views
from .loop import (
    TrainConfig, compute_loss, continue_pretraining, init_model, load_dataset, train,
)
from .model import ModelState

__all__ = [
    "AugmentSpec", "ModelState", "SyntheticDataset", "TrainConfig", "augment_pair",
    "augment_views", "compute_loss", "continue_pretraining", "init_model",
    "load_checkpoint", "load_dataset", "save_checkpoint", "train",
]
