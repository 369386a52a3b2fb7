"""Statistical verification of the method's guarantees, independent of any
training run.

Checks covered:
  * the exact identity for the selection-probability change under loss
    processing, including the sign rule around the pool constant beta;
  * the exponential concentration bound on the regroup-median estimate for
    contaminated loss populations (median-of-means tail bound);
  * the direction claim that loss processing concentrates selection mass on
    truly clean samples once noisy losses exceed clean ones.

Every check returns a JSON-ready report dict: {check, trials, statistic,
bound, pass, ...extras}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rml
from .data import Dataset
from .noise import corruption_mask
from .numerics import RngStream, softmax


@dataclass
class Population:
    """Scalar loss population: "normal"(loc, scale) or "point"(loc)."""

    kind: str = "normal"
    loc: float = 0.0
    scale: float = 1.0

    def sample(self, rng: RngStream, size: int) -> np.ndarray:
        if self.kind == "point":
            return np.full(size, self.loc)
        if self.kind == "normal":
            return rng.normal(self.loc, self.scale, size)
        raise ValueError(f"Population: unknown kind {self.kind!r}")

    def mean(self) -> float:
        return self.loc

    def var(self) -> float:
        return 0.0 if self.kind == "point" else self.scale ** 2


@dataclass
class MomExperiment:
    """Group-median deviation experiment on a (possibly contaminated) loss
    population.  epsilon_r is the deviation radius being tested, distinct
    from the loss-processing bias."""

    base: Population
    n: int = 6
    k: int = 10
    epsilon_r: float = 1.0
    trials: int = 100_000
    contamination: Population | None = None
    contamination_weight: float = 0.0

    def __post_init__(self):
        if self.epsilon_r <= 0:
            raise ValueError("MomExperiment: epsilon_r must be > 0")
        if not 0.0 <= self.contamination_weight < 1.0:
            raise ValueError("MomExperiment: contamination_weight must be in [0, 1)")
        if self.contamination_weight > 0 and self.contamination is None:
            raise ValueError("MomExperiment: contamination population missing")

    def sample(self, rng: RngStream, size: int) -> np.ndarray:
        values = self.base.sample(rng, size)
        if self.contamination_weight > 0:
            hit = rng.random(size) < self.contamination_weight
            if hit.any():
                values = values.copy()
                values[hit] = self.contamination.sample(rng, int(hit.sum()))
        return values

    def population_mean(self) -> float:
        w = self.contamination_weight
        if w == 0:
            return self.base.mean()
        return (1 - w) * self.base.mean() + w * self.contamination.mean()

    def population_var(self) -> float:
        w = self.contamination_weight
        second = (1 - w) * (self.base.var() + self.base.mean() ** 2)
        if w > 0:
            second += w * (self.contamination.var() + self.contamination.mean() ** 2)
        return second - self.population_mean() ** 2


def deviation_bound(n: int, k: int, variance: float, epsilon_r: float) -> tuple[float, float]:
    """Tail bound exp(-c1 * (1/2 - c2*var/eps^2)^2) with c1 = 2(n+1) and
    c2 = (n+k)/(k(n+1)); returns (bound, margin) where margin <= 0 marks the
    bound vacuous."""
    c1 = 2.0 * (n + 1)
    c2 = (n + k) / (k * (n + 1))
    margin = 0.5 - c2 * variance / epsilon_r ** 2
    return math.exp(-c1 * margin * margin), margin


def check_prop1(trials: int, m: int, rng: RngStream,
                loss_range: tuple[float, float] = (0.0, 30.0),
                epsilon_bias: float = 1.0, tolerance: float = 1e-9) -> dict:
    """Exact shift identity over random loss pools.

    For every pool, the log-probability change of each sample must equal
    l*(l + eps - 1) - beta (computed through two independent float paths),
    the pool constant beta must be positive, and the sign of the change must
    flip exactly where l^2 crosses beta.
    """
    if m < 2:
        raise ValueError("check_prop1: need m >= 2")
    low, high = loss_range
    max_residual = 0.0
    beta_positive = True
    sign_violations = 0
    for t in range(trials):
        losses = rng.child(t).uniform(low, high, m)
        shift, beta = rml.probability_shift(losses, epsilon_bias)
        closed = losses * (losses + epsilon_bias - 1.0) - beta
        max_residual = max(max_residual, float(np.max(np.abs(shift - closed))))
        beta_positive &= beta > 0
        if epsilon_bias == 1.0:
            # Sign rule: probability falls iff l^2 > beta (guard exact ties).
            crossing = losses ** 2 - beta
            decided = np.abs(crossing) > 1e-12
            sign_violations += int(np.sum(np.sign(shift[decided]) != np.sign(crossing[decided])))
    passed = max_residual < tolerance and beta_positive and sign_violations == 0
    return {
        "check": "prop1",
        "trials": trials,
        "statistic": max_residual,
        "bound": tolerance,
        "pass": bool(passed),
        "beta_always_positive": bool(beta_positive),
        "sign_rule_violations": sign_violations,
    }


def mom_estimate(samples, n: int, k: int, rng: RngStream) -> float:
    """Regroup-median estimate of n*k+1 loss draws; the final entry plays the
    training sample, the rest are regrouped.  Delegates to the training-path
    implementation so the two stay bit-identical."""
    values = np.asarray(samples, dtype=np.float64)
    if values.shape != (n * k + 1,):
        raise ValueError(f"mom_estimate: expected {n * k + 1} samples, got {values.shape}")
    estimate, _ = rml.regroup_median(
        float(values[-1]), values[:-1], rml.RegroupParams(n=n, k=k), rng
    )
    return estimate


def check_prop2(experiment: MomExperiment, rng: RngStream) -> dict:
    """Monte Carlo exceedance rate of the regroup-median estimate against the
    analytic tail bound.  One-sided: the bound is loose by construction, so
    acceptance is rate <= bound + 3 binomial standard errors.  Vacuous-bound
    configurations are reported, not failed."""
    mu = experiment.population_mean()
    var = experiment.population_var()
    bound, margin = deviation_bound(experiment.n, experiment.k, var, experiment.epsilon_r)
    vacuous = margin <= 0
    draw = experiment.n * experiment.k + 1
    exceed = 0
    for t in range(experiment.trials):
        tr = rng.child(t)
        values = experiment.sample(tr, draw)
        estimate = mom_estimate(values, experiment.n, experiment.k, tr)
        exceed += abs(estimate - mu) > experiment.epsilon_r
    rate = exceed / experiment.trials
    stderr = math.sqrt(max(rate * (1 - rate), 0.0) / experiment.trials)
    return {
        "check": "prop2",
        "trials": experiment.trials,
        "statistic": rate,
        "bound": bound,
        "pass": True if vacuous else bool(rate <= bound + 3 * stderr),
        "vacuous": vacuous,
        "margin": margin,
        "population_mean": mu,
        "population_var": var,
    }


def check_mom_robustness(ns: tuple[int, ...] = (2, 4, 6),
                         ks: tuple[int, ...] = (1, 2, 3),
                         corrupt_value: float = 1e12,
                         seed: int = 7) -> dict:
    """Exhaustive containment check for the median step.

    For each (n, k): build real group means from a regroup call, then replace
    every subset of at most ceil((n+1)/2)-1 of the n+1 median inputs with
    every +-corrupt_value pattern.  The median must stay within [min, max] of
    the untouched values in all cases.
    """
    from itertools import combinations, product

    from .numerics import median_of

    cases = 0
    violations = 0
    for n in ns:
        for k in ks:
            rng = RngStream(seed, n * 100 + k)
            selected = rng.uniform(0.0, 5.0, n * k)
            sample_loss = float(rng.uniform(0.0, 5.0))
            _, groups = rml.regroup_median(
                sample_loss, selected, rml.RegroupParams(n=n, k=k), rng
            )
            pool = np.append(groups.means, sample_loss)
            budget = (n + 1 + 1) // 2 - 1   # ceil((n+1)/2) - 1
            for size in range(1, budget + 1):
                for positions in combinations(range(n + 1), size):
                    for signs in product((-1.0, 1.0), repeat=size):
                        corrupted = pool.copy()
                        for pos, sign in zip(positions, signs):
                            corrupted[pos] = sign * corrupt_value
                        untouched = np.delete(pool, positions)
                        estimate = median_of(corrupted)
                        cases += 1
                        if not untouched.min() <= estimate <= untouched.max():
                            violations += 1
    return {
        "check": "mom",
        "trials": cases,
        "statistic": violations,
        "bound": 0,
        "pass": violations == 0,
    }


def check_cor1(dataset: Dataset, cache: rml.LossCache,
               epsilon_bias: float = 1.0) -> dict:
    """Aggregate selection mass on truly clean samples, with and without loss
    processing.  Under the separation premise (noisy mean loss above clean
    mean loss), processing must not lose clean mass."""
    mask = corruption_mask(dataset)
    losses = cache.loss
    plain_mass = []
    processed_mass = []
    for members in dataset.class_index:
        if members.size == 0:
            continue
        clean_members = ~mask[members]
        if not clean_members.any():
            continue
        member_losses = losses[members]
        plain = softmax(-member_losses)
        processed = rml.selection_probabilities(member_losses, epsilon_bias).probs
        plain_mass.append(float(plain[clean_members].sum()))
        processed_mass.append(float(processed[clean_members].sum()))
    plain_mean = float(np.mean(plain_mass))
    processed_mean = float(np.mean(processed_mass))
    premise = False
    if mask.any() and (~mask).any():
        premise = float(losses[mask].mean()) > float(losses[~mask].mean())
    passed = processed_mean >= plain_mean - 1e-12 if premise else True
    return {
        "check": "cor1",
        "trials": len(plain_mass),
        "statistic": processed_mean,
        "bound": plain_mean,
        "pass": bool(passed),
        "premise_holds": bool(premise),
        "clean_mass_plain": plain_mean,
        "clean_mass_processed": processed_mean,
    }
