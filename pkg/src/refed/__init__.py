"""Two-branch feature disentanglement for pixel-wise satellite image time series classification."""
__version__ = "0.1.0"

from .config import ConfigError, RunConfig
from .data import Domain, Kind, LabeledDataset, load_dataset, mixed_label, save_dataset
from .metrics import accuracy, confusion, per_class_f1, weighted_f1
from .preprocessing import SplitAssignment, fit_scaling, apply_scaling, polygon_split
from .refed import LossBreakdown, RefedModel, contrastive_loss, fit, infer
from .synth import GeneratorConfig, generate
from .tempcnn import TempCNN

__all__ = [
    "ConfigError", "RunConfig", "Domain", "Kind", "LabeledDataset", "load_dataset", "mixed_label", "save_dataset",
    "accuracy", "confusion", "per_class_f1", "weighted_f1", "SplitAssignment", "fit_scaling", "apply_scaling",
    "polygon_split", "LossBreakdown", "RefedModel", "contrastive_loss", "fit", "infer", "GeneratorConfig",
    "generate", "TempCNN",
]
