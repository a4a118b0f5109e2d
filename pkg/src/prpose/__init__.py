"""Multi-hypothesis 3D pose lifting by adaptive 2D noise amplification.

A frozen single-hypothesis lifter is turned into a sampler: an adaptive variance
generator (AVG), trained on the lifter's own normalized per-joint errors, sets
per-joint 2D noise scales, and each noisy 2D copy is lifted to one 3D hypothesis.
"""

from .avgnoise import AdaptiveVarianceRegressor, compute_pseudo_labels, train_avg
from .core import HypothesisSet, JointCountError, PoseError, Skeleton
from .lifter import LifterRegressor, train_lifter
from .metrics import EvalProtocol, j_best_mpjpe, min_mpjpe, mpjpe, pck, procrustes_align
from .sampler import (MultiHypothesisLifter, NoiseKind, NoiseStrategy, adjust_sigma, amplify_2d,
                      generate_hypotheses)
from .synthgen import DatasetConfig, make_dataset

__version__ = "0.1.0"

__all__ = [
    "AdaptiveVarianceRegressor", "DatasetConfig", "EvalProtocol", "HypothesisSet",
    "JointCountError", "LifterRegressor", "MultiHypothesisLifter", "NoiseKind", "NoiseStrategy",
    "PoseError", "Skeleton", "adjust_sigma", "amplify_2d", "compute_pseudo_labels",
    "generate_hypotheses", "j_best_mpjpe", "make_dataset", "min_mpjpe", "mpjpe", "pck",
    "procrustes_align", "train_avg", "train_lifter",
]
