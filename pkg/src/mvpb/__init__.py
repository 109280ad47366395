"""PAC-Bayesian majority votes over multiple views.

Weighted ensembles of per-view voters are trained by directly minimizing a
generalization bound, so the training objective is also the certificate.
"""

from .bounds import BoundKind, bound_value, eval_bound, psi_terms
from .data import MultiViewDataset, SplitSpec, load_dataset, poison_views, split, synth_dataset
from .optimize import OptimConfig, certify, initial_params, minimize
from .params import PosteriorParams
from .risks import EmpiricalStats, empirical_stats
from .voters import ForestConfig, PredictionCache, predict_cache, train_forest

__all__ = [
    "BoundKind", "bound_value", "eval_bound", "psi_terms",
    "MultiViewDataset", "SplitSpec", "load_dataset", "poison_views", "split", "synth_dataset",
    "OptimConfig", "certify", "initial_params", "minimize",
    "PosteriorParams", "EmpiricalStats", "empirical_stats",
    "ForestConfig", "PredictionCache", "predict_cache", "train_forest",
]
