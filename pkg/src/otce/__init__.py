"""Optimal-transport conditional entropy (OTCE) transferability estimation."""

__version__ = "0.1.0"

from .data import Dataset, Manifest, ManifestEntry, TaskPair, load_dataset, load_manifest
from .fit import OtceModel, default_model, fit_otce
from .metrics import TaskPairMetrics, compute_pair_metrics, conditional_entropy, otce_score
from .ot import Coupling, cost_matrix, exact_ot, sinkhorn

__all__ = [
    "Coupling",
    "Dataset",
    "Manifest",
    "ManifestEntry",
    "OtceModel",
    "TaskPair",
    "TaskPairMetrics",
    "compute_pair_metrics",
    "conditional_entropy",
    "cost_matrix",
    "default_model",
    "exact_ot",
    "fit_otce",
    "load_dataset",
    "load_manifest",
    "otce_score",
    "sinkhorn",
]
