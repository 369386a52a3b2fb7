"""Training loops: plain cross-entropy, regroup-median-loss training, and the
semi-supervised variant with teacher/student agreement filtering plus mixup.

All loops are deterministic under RunConfig.seed: batch shuffles, cache
refreshes, and mixup draws run on derived streams keyed by epoch (and sample
where applicable), so a rerun reproduces metrics bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import model as model_ops
from . import rml
from .data import Dataset
from .model import ModelState, OptimizerState
from .noise import corruption_mask
from .numerics import RngStream, softmax

MODES = ("ce", "rml", "rml_semi")

# Stream ids: one per logical sampling site.
STREAM_SHUFFLE = 11
STREAM_REFRESH = 12
STREAM_MIXUP = 13


@dataclass
class RunConfig:
    mode: str = "rml"
    total_epochs: int = 100
    batch_size: int = 128
    warmup_epochs: int = 5
    common_epochs: int | None = None     # semi-supervised switch point; None = all common
    regroup: rml.RegroupParams = field(default_factory=rml.RegroupParams)
    ema_lambda: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"RunConfig: unknown mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("RunConfig: batch_size must be >= 1")
        if self.common_epochs is None:
            self.common_epochs = self.total_epochs
        if self.common_epochs > self.total_epochs:
            raise ValueError("RunConfig: common_epochs must not exceed total_epochs")
        if self.mode != "ce" and self.warmup_epochs < 1:
            raise ValueError("RunConfig: rml modes need warmup_epochs >= 1")
        if self.mode == "rml_semi" and self.common_epochs < self.warmup_epochs:
            raise ValueError("RunConfig: common_epochs must cover the warmup")
        if not 0.0 <= self.ema_lambda <= 1.0:
            raise ValueError("RunConfig: ema_lambda must be in [0, 1]")


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    test_accuracy: float
    clean_mean_loss: float
    noisy_mean_loss: float
    clean_mean_selection_prob: float
    noisy_mean_selection_prob: float
    labeled_fraction: float


METRICS_COLUMNS = list(MetricsRow.__dataclass_fields__)


def selection_prob_by_sample(dataset: Dataset, losses: np.ndarray,
                             epsilon_bias: float, processed: bool = True) -> np.ndarray:
    """Within-class selection probability of every sample, from its loss."""
    out = np.empty(dataset.n_samples)
    for members in dataset.class_index:
        if members.size == 0:
            continue
        member_losses = losses[members]
        if processed:
            out[members] = rml.selection_probabilities(member_losses, epsilon_bias).probs
        else:
            out[members] = softmax(-member_losses)
    return out


def _epoch_metrics(epoch: int, train_loss: float, dataset: Dataset,
                   test: Dataset | None, model: ModelState,
                   epsilon_bias: float, labeled_fraction: float) -> MetricsRow:
    probs = model_ops.forward(model, dataset.features)
    losses = model_ops.per_sample_ce(probs, dataset.observed_labels)
    # Held-out evaluation is against the truth when the split retains it, so
    # a noisy test half cannot cap the reported accuracy.
    test_acc = float("nan")
    if test is not None:
        test_acc = model_ops.accuracy(model, test,
                                      against_true=test.true_labels is not None)
    clean_loss = noisy_loss = clean_p = noisy_p = float("nan")
    if dataset.true_labels is not None:
        mask = corruption_mask(dataset)
        sel = selection_prob_by_sample(dataset, losses, epsilon_bias)
        if (~mask).any():
            clean_loss = float(losses[~mask].mean())
            clean_p = float(sel[~mask].mean())
        if mask.any():
            noisy_loss = float(losses[mask].mean())
            noisy_p = float(sel[mask].mean())
    return MetricsRow(epoch, float(train_loss), float(test_acc), clean_loss,
                      noisy_loss, clean_p, noisy_p, float(labeled_fraction))


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start:start + batch_size]


def _weighted_epoch(dataset: Dataset, model: ModelState, teacher: ModelState | None,
                    opt: OptimizerState, config: RunConfig, epoch: int,
                    cache: rml.LossCache | None) -> float:
    """One pass over shuffled mini-batches; cache=None means plain CE.

    Returns the mean optimized batch loss.  When a cache is given, batch
    weights carry its estimates to this step's fresh losses.
    """
    shuffle = RngStream(config.seed, STREAM_SHUFFLE).child(epoch)
    order = shuffle.permutation(dataset.n_samples)
    total, count = 0.0, 0
    for batch in _batches(order, config.batch_size):
        x = dataset.features[batch]
        y = dataset.observed_labels[batch]
        if cache is None:
            losses, grads = model_ops.loss_and_grad(model, x, y)
            total += float(losses.mean())
        else:
            fresh = model_ops.per_sample_ce(model_ops.forward(model, x), y)
            weights = rml.batch_weights(cache, batch, fresh)
            losses, grads = model_ops.loss_and_grad(model, x, y, weights)
            total += float((weights * losses).mean())
        model_ops.sgd_step(model, opt, grads, epoch)
        if teacher is not None:
            model_ops.ema_update(teacher, model, config.ema_lambda)
        count += 1
    return total / max(count, 1)


def train_ce(dataset: Dataset, model: ModelState, opt: OptimizerState,
             config: RunConfig, test: Dataset | None = None):
    """Plain cross-entropy baseline."""
    rows = []
    for epoch in range(config.total_epochs):
        train_loss = _weighted_epoch(dataset, model, None, opt, config, epoch, None)
        rows.append(_epoch_metrics(epoch, train_loss, dataset, test, model,
                                   config.regroup.epsilon_bias, float("nan")))
    return model, rows


def train_rml(dataset: Dataset, model: ModelState, teacher: ModelState,
              opt: OptimizerState, config: RunConfig, test: Dataset | None = None):
    """Warmup on plain CE to populate the loss cache, then weighted batches
    from the frozen cache with an end-of-epoch cache rebuild."""
    refresh_stream = RngStream(config.seed, STREAM_REFRESH)
    cache = rml.empty_cache(dataset.n_samples)
    rows = []
    for epoch in range(config.total_epochs):
        active = cache if epoch >= config.warmup_epochs else None
        train_loss = _weighted_epoch(dataset, model, teacher, opt, config, epoch, active)
        if epoch + 1 >= config.warmup_epochs:
            cache = rml.refresh_cache(cache, dataset, model, config.regroup, refresh_stream)
        rows.append(_epoch_metrics(epoch, train_loss, dataset, test, model,
                                   config.regroup.epsilon_bias, float("nan")))
    return model, teacher, rows


def separate(dataset: Dataset, student: ModelState, teacher: ModelState):
    """Samples whose student AND teacher predictions match the observed label
    are kept as labeled; the rest become the unlabeled pool."""
    student_pred = model_ops.forward(student, dataset.features).argmax(axis=1)
    teacher_pred = model_ops.forward(teacher, dataset.features).argmax(axis=1)
    agree = (student_pred == dataset.observed_labels) & (teacher_pred == dataset.observed_labels)
    idx = np.arange(dataset.n_samples)
    return idx[agree], idx[~agree]


def mixup_batch(features: np.ndarray, labels: np.ndarray,
                unlabeled_features: np.ndarray, rng: RngStream):
    """Convex blend toward the labeled batch: gamma ~ U[0,1] reflected into
    [0.5, 1], loss target stays the labeled batch's labels."""
    if features.shape != unlabeled_features.shape:
        raise ValueError("mixup_batch: labeled/unlabeled feature shapes must match")
    gamma = float(rng.random())
    gamma = max(gamma, 1.0 - gamma)
    mixed = gamma * features + (1.0 - gamma) * unlabeled_features
    return mixed, labels, gamma


def train_rml_semi(dataset: Dataset, model: ModelState, teacher: ModelState,
                   opt: OptimizerState, config: RunConfig, test: Dataset | None = None):
    """Common training up to common_epochs, then per-epoch agreement
    separation and mixup of labeled batches toward unlabeled features."""
    refresh_stream = RngStream(config.seed, STREAM_REFRESH)
    mixup_stream = RngStream(config.seed, STREAM_MIXUP)
    cache = rml.empty_cache(dataset.n_samples)
    rows = []
    for epoch in range(config.total_epochs):
        labeled_fraction = float("nan")
        semi = epoch >= config.common_epochs
        if semi:
            labeled, unlabeled = separate(dataset, model, teacher)
            labeled_fraction = labeled.size / dataset.n_samples
        if not semi or labeled.size == 0:
            # Common body; also the fallback when separation labels nothing.
            active = cache if epoch >= config.warmup_epochs else None
            train_loss = _weighted_epoch(dataset, model, teacher, opt, config, epoch, active)
        else:
            ep_stream = mixup_stream.child(epoch)
            order = ep_stream.permutation(labeled.size)
            if unlabeled.size:
                cycle = unlabeled[ep_stream.permutation(unlabeled.size)]
            total, count = 0.0, 0
            for pos in range(0, labeled.size, config.batch_size):
                batch = labeled[order[pos:pos + config.batch_size]]
                x = dataset.features[batch]
                y = dataset.observed_labels[batch]
                if unlabeled.size:
                    partner = cycle[(pos + np.arange(batch.size)) % unlabeled.size]
                    xu = dataset.features[partner]
                else:
                    xu = x    # nothing unlabeled: blend with itself, a no-op
                mixed, y, _ = mixup_batch(x, y, xu, ep_stream.child(pos))
                losses, grads = model_ops.loss_and_grad(model, mixed, y)
                model_ops.sgd_step(model, opt, grads, epoch)
                model_ops.ema_update(teacher, model, config.ema_lambda)
                total += float(losses.mean())
                count += 1
            train_loss = total / max(count, 1)
        if epoch + 1 >= config.warmup_epochs:
            cache = rml.refresh_cache(cache, dataset, model, config.regroup, refresh_stream)
        rows.append(_epoch_metrics(epoch, train_loss, dataset, test, model,
                                   config.regroup.epsilon_bias, labeled_fraction))
    return model, teacher, rows


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    """One row per epoch; floats via repr so reruns are byte-identical."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            record = asdict(row)
            writer.writerow([
                record["epoch"],
                *(repr(float(record[c])) for c in METRICS_COLUMNS[1:]),
            ])
