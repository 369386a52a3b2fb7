"""Desk-scale laboratory for training classifiers under label noise with
regroup-median loss estimation.

Subpackages
-----------
numerics   deterministic kernel: softmax/CE, medians, weighted sampling, RNG streams
data       synthetic generators, IDX files, dataset container, splits
noise      symmetric / pairflip / feature-dependent label corruption
model      linear and MLP classifiers with analytic gradients, SGD, EMA teacher
rml        selection distributions, regroup-median estimation, loss cache
trainer    CE / regroup-median / semi-supervised training loops
verify     statistical checks of the estimator's guarantees
cli        config-driven command-line entry points
"""

from .data import Dataset, make_blobs, make_two_moons, read_idx, split
from .model import ModelState, OptimizerState, ema_update, forward, init_model, init_optimizer
from .noise import (
    NoiseSpec,
    corruption_mask,
    inject_instance_dependent,
    inject_pairflip,
    inject_symmetric,
)
from .numerics import RngStream, cross_entropy, median_of, softmax
from .rml import (
    LossCache,
    RegroupParams,
    batch_weights,
    correct_estimate,
    estimate_for_sample,
    probability_shift,
    propagate_estimate,
    refresh_cache,
    regroup_median,
    selection_probabilities,
)
from .trainer import RunConfig, train_ce, train_rml, train_rml_semi

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "LossCache",
    "ModelState",
    "NoiseSpec",
    "OptimizerState",
    "RegroupParams",
    "RngStream",
    "RunConfig",
    "batch_weights",
    "correct_estimate",
    "corruption_mask",
    "cross_entropy",
    "ema_update",
    "estimate_for_sample",
    "forward",
    "init_model",
    "init_optimizer",
    "inject_instance_dependent",
    "inject_pairflip",
    "inject_symmetric",
    "make_blobs",
    "make_two_moons",
    "median_of",
    "probability_shift",
    "propagate_estimate",
    "read_idx",
    "refresh_cache",
    "regroup_median",
    "selection_probabilities",
    "softmax",
    "split",
    "train_ce",
    "train_rml",
    "train_rml_semi",
]
