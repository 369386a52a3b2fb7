"""Regroup median loss estimation.

For each training sample, same-class candidates are drawn (without
replacement) with probability proportional to exp(-processed loss), where the
processed loss l*(l+eps) widens the gap between small and large losses.  The
drawn losses are regrouped at random into n disjoint groups of k; the sample's
loss estimate is the median of the n group means together with the sample's
own loss.  Because the median of n+1 values tolerates up to ceil((n+1)/2)-1
corrupted entries, a handful of mislabeled candidates cannot drag the
estimate.

Loss bookkeeping follows the epoch cache discipline: plain losses and
estimates are recomputed once per epoch; inside an epoch the frozen cache is
carried to fresh mini-batch losses by the scale l_new * (estimate/plain), and
estimates larger than the plain loss are clamped to it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model as model_ops
from .data import Dataset
from .numerics import (
    LOSS_FLOOR,
    RngStream,
    _race_draw,
    child_generator_pool,
    log_softmax,
    logsumexp,
    softmax,
)

ESTIMATORS = ("median", "mean")


@dataclass
class RegroupParams:
    """Group count n (even), group size k, and the processing bias eps.

    use_processed_loss / estimator exist for ablations: plain-loss selection
    (no processing) and plain-mean estimation (no median).
    """

    n: int = 6
    k: int = 20
    epsilon_bias: float = 1.0
    use_processed_loss: bool = True
    estimator: str = "median"

    def __post_init__(self):
        if self.n < 2 or self.n % 2 != 0:
            raise ValueError(f"RegroupParams: n must be a positive even integer, got {self.n}")
        if self.k < 1:
            raise ValueError(f"RegroupParams: k must be >= 1, got {self.k}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"RegroupParams: unknown estimator {self.estimator!r}")


@dataclass
class SelectionDistribution:
    """Per-candidate processed losses and selection probabilities."""

    losses: np.ndarray
    processed: np.ndarray
    probs: np.ndarray
    indices: np.ndarray | None = None   # dataset indices, when class-scoped
    label: int | None = None


@dataclass
class GroupMeans:
    assignments: np.ndarray   # (n, k) indices into the selected-loss vector
    means: np.ndarray         # (n,)


@dataclass
class LossCache:
    """Per-sample plain loss and regroup-median estimate for one epoch."""

    loss: np.ndarray
    loss_rml: np.ndarray
    epoch: int


def empty_cache(n_samples: int) -> LossCache:
    return LossCache(np.zeros(n_samples), np.zeros(n_samples), epoch=-1)


def processed_loss(losses: np.ndarray, epsilon_bias: float) -> np.ndarray:
    """l * (l + eps): grows superlinearly, so large losses lose far more
    selection mass than small ones gain."""
    return losses * (losses + epsilon_bias)


def selection_probabilities(losses, epsilon_bias: float = 1.0) -> SelectionDistribution:
    """Selection distribution exp(-processed)/sum over one candidate pool."""
    l = np.asarray(losses, dtype=np.float64)
    if l.size < 1:
        raise ValueError("selection_probabilities: empty loss vector")
    if np.any(l < 0) or not np.all(np.isfinite(l)):
        raise ValueError("selection_probabilities: losses must be finite and >= 0")
    proc = processed_loss(l, epsilon_bias)
    return SelectionDistribution(losses=l, processed=proc, probs=softmax(-proc))


def probability_shift(losses, epsilon_bias: float = 1.0) -> tuple[np.ndarray, float]:
    """Per-sample log-probability change caused by loss processing, with the
    pool constant beta = log(sum exp(-l) / sum exp(-processed)).

    The change equals l*(l + eps - 1) - beta; with eps = 1 it is l^2 - beta,
    so exactly the samples with l^2 > beta lose selection probability.
    Both probabilities are evaluated in log space.
    """
    l = np.asarray(losses, dtype=np.float64)
    proc = processed_loss(l, epsilon_bias)
    shift = log_softmax(-l) - log_softmax(-proc)
    beta = logsumexp(-l) - logsumexp(-proc)
    return shift, float(beta)


def regroup_median(sample_loss: float, selected_losses, params: RegroupParams,
                   rng: RngStream) -> tuple[float, GroupMeans]:
    """Median of the n random-group means and the sample's own loss.

    The n+1 candidate count is odd, so the median is the exact middle order
    statistic.  With estimator="mean" the plain mean of the selected losses
    is returned instead (the grouping is still reported).
    """
    selected = np.asarray(selected_losses, dtype=np.float64)
    if selected.shape != (params.n * params.k,):
        raise ValueError(
            f"regroup_median: expected {params.n * params.k} selected losses, "
            f"got {selected.shape}"
        )
    assignments = rng.permutation(selected.size).reshape(params.n, params.k)
    means = selected[assignments].mean(axis=1)
    groups = GroupMeans(assignments=assignments, means=means)
    if params.estimator == "mean":
        return float(selected.mean()), groups
    # n+1 values, odd count: the middle order statistic via partition
    # (same element np.median would pick, without its reduction overhead).
    pool = np.append(means, sample_loss)
    mid = pool.size // 2
    return float(np.partition(pool, mid)[mid]), groups


def _class_selection_weights(class_losses: np.ndarray, params: RegroupParams) -> np.ndarray:
    """Selection weights over one class pool (the race sampler only needs
    them up to a constant, so the full-pool softmax serves every member)."""
    if params.use_processed_loss:
        return softmax(-processed_loss(class_losses, params.epsilon_bias))
    return softmax(-class_losses)


def _estimate(own_loss: float, class_losses: np.ndarray, weights: np.ndarray,
              params: RegroupParams, rng: RngStream) -> float:
    """Draw and regroup against `class_losses`; `weights` must carry zero in
    the sample's own slot so it cannot vote for its own loss."""
    available = int(np.count_nonzero(weights > 0))
    k = params.k if params.n * params.k <= available else available // params.n
    if k == 0:
        return own_loss
    # weights come from a softmax and count <= available, so the race core
    # can skip re-validation (this path runs once per sample per epoch).
    draw = _race_draw(weights, params.n * k, rng)
    local = params if k == params.k else replace(params, k=k)
    estimate, _ = regroup_median(own_loss, class_losses[draw], local, rng)
    return estimate


def estimate_for_sample(sample_index: int, dataset: Dataset, cache: LossCache,
                        params: RegroupParams, rng: RngStream) -> float:
    """One sample's regroup-median estimate from the cached epoch losses.

    Candidates are the sample's class peers, the sample itself excluded so it
    cannot vote for its own loss.  When the pool (or its positive-probability
    part) cannot fill n groups of k, k shrinks; when even one round of groups
    cannot be filled, the sample's own cached loss is returned.
    """
    y = int(dataset.observed_labels[sample_index])
    members = dataset.class_index[y]
    own = float(cache.loss[sample_index])
    if members.size <= 1:
        return own
    class_losses = cache.loss[members]
    weights = _class_selection_weights(class_losses, params)
    weights[int(np.searchsorted(members, sample_index))] = 0.0
    return _estimate(own, class_losses, weights, params, rng)


def propagate_estimate(cache: LossCache, sample_index: int, fresh_loss: float) -> float:
    """Carry the cached estimate to a fresh loss: fresh * estimate/plain."""
    prior = cache.loss[sample_index]
    return float(fresh_loss * cache.loss_rml[sample_index] / max(prior, LOSS_FLOOR))


def correct_estimate(estimate: float, original_loss: float) -> float:
    """Keep the estimate only when it does not exceed the plain loss."""
    return min(estimate, original_loss)


def batch_weights(cache: LossCache, batch_indices: np.ndarray,
                  fresh_losses: np.ndarray) -> np.ndarray:
    """Per-sample weights w_i so the weighted batch mean (1/B) sum w_i*l_i
    equals the mean of the propagated-and-corrected estimates."""
    idx = np.asarray(batch_indices, dtype=np.int64)
    fresh = np.asarray(fresh_losses, dtype=np.float64)
    propagated = fresh * cache.loss_rml[idx] / np.maximum(cache.loss[idx], LOSS_FLOOR)
    corrected = np.minimum(propagated, fresh)
    weights = np.clip(corrected / np.maximum(fresh, LOSS_FLOOR), 0.0, 1.0)
    # Reduction equivalence: the weighted mean reproduces the estimate mean.
    assert abs(float((weights * fresh).mean() - corrected.mean())) < 1e-9
    return weights


def refresh_cache(cache: LossCache, dataset: Dataset, model: "model_ops.ModelState",
                  params: RegroupParams, rng: RngStream) -> LossCache:
    """End-of-epoch rebuild: one full forward pass records plain losses, then
    every sample gets a fresh corrected regroup-median estimate.

    Per-sample randomness is keyed by (epoch, sample index), so the rebuild
    is reproducible and could run in any order.
    """
    probs = model_ops.forward(model, dataset.features)
    fresh = model_ops.per_sample_ce(probs, dataset.observed_labels)
    new = LossCache(loss=fresh, loss_rml=np.empty_like(fresh), epoch=cache.epoch + 1)
    # Re-keyed generator pool: bit-identical to epoch_stream.child(i) but
    # without a fresh BitGenerator object per sample.
    fetch = child_generator_pool(rng.child(new.epoch))
    for members in dataset.class_index:
        if members.size == 0:
            continue
        class_losses = fresh[members]
        if members.size == 1:
            new.loss_rml[members[0]] = class_losses[0]
            continue
        base_weights = _class_selection_weights(class_losses, params)
        for pos in range(members.size):
            i = int(members[pos])
            weights = base_weights.copy()
            weights[pos] = 0.0
            est = _estimate(float(class_losses[pos]), class_losses, weights,
                            params, fetch(i))
            new.loss_rml[i] = correct_estimate(est, float(class_losses[pos]))
    return new


def dump_cache(cache: LossCache, dataset: Dataset, path) -> None:
    """Diagnostic CSV: sample_id, labels, plain/estimated loss, corruption."""
    has_truth = dataset.true_labels is not None
    with open(path, "w", newline="") as f:
        f.write("sample_id,true_label,observed_label,loss_plain,loss_rml,is_corrupted\n")
        for i in range(dataset.n_samples):
            true = str(int(dataset.true_labels[i])) if has_truth else ""
            corrupted = (
                str(int(dataset.true_labels[i] != dataset.observed_labels[i]))
                if has_truth else ""
            )
            f.write(
                f"{i},{true},{int(dataset.observed_labels[i])},"
                f"{float(cache.loss[i])!r},{float(cache.loss_rml[i])!r},{corrupted}\n"
            )
