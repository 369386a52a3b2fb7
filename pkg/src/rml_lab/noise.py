"""Label corruption models: symmetric, pairflip, and feature-dependent flips.

Each injector maps a dataset to a new dataset with corrupted observed labels;
true labels and features are untouched and the per-class index is rebuilt.
Per-sample randomness is keyed by sample index, so extending a dataset never
changes the fate of earlier samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset, feature_stats
from .numerics import RngStream, child_generator_pool, softmax

NOISE_KINDS = ("symmetric", "pairflip", "instance_dependent", "none")

INSTANCE_FLIP_STDEV = 0.1


class TrueLabelsUnavailable(ValueError):
    """Raised when an operation needs true labels a dataset does not carry."""


@dataclass
class NoiseSpec:
    kind: str
    rate: float
    rng_stream: int = 2

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"NoiseSpec: unknown kind {self.kind!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"NoiseSpec: rate must be in [0, 1), got {self.rate}")
        if self.kind == "pairflip" and self.rate >= 0.5:
            raise ValueError("NoiseSpec: pairflip rate must be < 0.5")


def apply(dataset: Dataset, spec: NoiseSpec, seed: int) -> Dataset:
    """Run the injector named by `spec` with its dedicated stream."""
    rng = RngStream(seed, spec.rng_stream)
    if spec.kind == "none":
        return dataset
    if spec.kind == "symmetric":
        return inject_symmetric(dataset, spec.rate, rng)
    if spec.kind == "pairflip":
        return inject_pairflip(dataset, spec.rate, rng)
    return inject_instance_dependent(dataset, spec.rate, rng)


def inject_symmetric(dataset: Dataset, rate: float, rng: RngStream) -> Dataset:
    """Flip each label with probability `rate`, uniformly to one of the other
    c-1 classes, so the realized noise rate matches the nominal rate."""
    if dataset.num_classes < 2:
        raise ValueError("inject_symmetric: need at least 2 classes")
    c = dataset.num_classes
    labels = dataset.observed_labels.copy()
    fetch = child_generator_pool(rng)
    for i in range(labels.size):
        child = fetch(i)
        if child.random() < rate:
            target = int(child.integers(0, c - 1))
            if target >= labels[i]:
                target += 1
            labels[i] = target
    return dataset.with_observed_labels(labels)


def inject_pairflip(dataset: Dataset, rate: float, rng: RngStream) -> Dataset:
    """Flip each label with probability `rate` to the adjacent class
    (y+1 mod c); all other transitions keep zero mass."""
    if rate >= 0.5:
        raise ValueError("inject_pairflip: rate must be < 0.5")
    c = dataset.num_classes
    labels = dataset.observed_labels.copy()
    fetch = child_generator_pool(rng)
    for i in range(labels.size):
        if fetch(i).random() < rate:
            labels[i] = (labels[i] + 1) % c
    return dataset.with_observed_labels(labels)


def inject_instance_dependent(dataset: Dataset, rate: float, rng: RngStream) -> Dataset:
    """Feature-dependent corruption.

    Per-sample flip probability q_i ~ truncated normal(rate, 0.1, [0, 1]);
    flip targets follow softmax of per-class random-projection scores with
    the current class masked out, so samples that look alike get alike
    corruption.  Scores use an internally standardized feature copy, which
    makes the injector insensitive to the caller's feature scaling.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("inject_instance_dependent: rate must be in [0, 1)")
    if dataset.num_classes < 2:
        raise ValueError("inject_instance_dependent: need at least 2 classes")
    n, d = dataset.features.shape
    c = dataset.num_classes
    mean, std = feature_stats(dataset.features)
    x = (dataset.features - mean) / std

    # Projections first, from the parent stream, so per-sample substreams
    # stay index-keyed.
    proj = rng.normal(size=(c, d, c))
    u_flip = np.empty(n)
    u_target = np.empty(n)
    fetch = child_generator_pool(rng)
    for i in range(n):
        child = fetch(i)
        u_flip[i] = child.random()
        u_target[i] = child.random()

    a = (0.0 - rate) / INSTANCE_FLIP_STDEV
    b = (1.0 - rate) / INSTANCE_FLIP_STDEV
    q = stats.truncnorm.ppf(u_flip, a, b, loc=rate, scale=INSTANCE_FLIP_STDEV)
    q = np.clip(q, 0.0, 1.0)

    labels = dataset.observed_labels.copy()
    transition = instance_flip_distribution(x, labels, q, proj)

    cdf = np.cumsum(transition, axis=1)
    cdf[:, -1] = 1.0
    new_labels = (u_target[:, None] >= cdf).sum(axis=1).astype(np.int64)
    return dataset.with_observed_labels(new_labels)


def instance_flip_distribution(x: np.ndarray, labels: np.ndarray, q: np.ndarray,
                               proj: np.ndarray) -> np.ndarray:
    """Per-sample label transition rows: q_i * softmax of the sample's
    class-projection scores with the current class masked out, plus 1 - q_i
    staying mass.  A deterministic function of (features, label, q)."""
    n, c = labels.shape[0], proj.shape[0]
    transition = np.empty((n, c))
    for cls in range(c):
        rows = labels == cls
        if not rows.any():
            continue
        scores = x[rows] @ proj[cls]
        scores[:, cls] = -np.inf
        # softmax with one -inf column: exp(-inf) = 0 is what we want.
        shifted = scores - scores.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        transition[rows] = expd / expd.sum(axis=1, keepdims=True)
    transition *= q[:, None]
    transition[np.arange(n), labels] = 1.0 - q
    return transition


def corruption_mask(dataset: Dataset) -> np.ndarray:
    """Boolean mask, true where the observed label disagrees with the truth."""
    if dataset.true_labels is None:
        raise TrueLabelsUnavailable("corruption_mask: dataset has no true labels")
    return dataset.observed_labels != dataset.true_labels


def empirical_transition_matrix(dataset: Dataset) -> np.ndarray:
    """Row-normalized c x c counts of true label -> observed label."""
    if dataset.true_labels is None:
        raise TrueLabelsUnavailable("empirical_transition_matrix: no true labels")
    c = dataset.num_classes
    counts = np.zeros((c, c))
    np.add.at(counts, (dataset.true_labels, dataset.observed_labels), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    totals[totals == 0] = 1.0
    return counts / totals
