import math

import numpy as np
import pytest

from rml_lab.data import Dataset
from rml_lab.numerics import RngStream, softmax
from rml_lab.rml import LossCache, RegroupParams, regroup_median, selection_probabilities
from rml_lab.verify import (
    MomExperiment,
    Population,
    check_cor1,
    check_mom_robustness,
    check_prop1,
    check_prop2,
    deviation_bound,
    mom_estimate,
)


class TestCheckProp1:
    def test_small_run_passes(self):
        report = check_prop1(500, 100, RngStream(0, 5))
        assert report["pass"]
        assert report["statistic"] < 1e-9
        assert report["beta_always_positive"]
        assert report["sign_rule_violations"] == 0

    def test_high_loss_sample_loses_probability(self):
        # Direct evaluation of the two selection rules on [0, 10].
        losses = np.array([0.0, 10.0])
        plain = softmax(-losses)
        processed = selection_probabilities(losses).probs
        assert processed[1] < plain[1]
        assert processed[0] > plain[0]

    def test_m_guard(self):
        with pytest.raises(ValueError):
            check_prop1(10, 1, RngStream(1, 5))


class TestMomEstimate:
    def test_delegates_bit_for_bit(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(0, 5, 13)
        a = mom_estimate(values, 6, 2, RngStream(3, 8))
        b, _ = regroup_median(values[-1], values[:-1], RegroupParams(n=6, k=2),
                              RngStream(3, 8))
        assert a == b

    def test_shape_guard(self):
        with pytest.raises(ValueError):
            mom_estimate(np.zeros(12), 6, 2, RngStream(4))


class TestDeviationBound:
    def test_constants(self):
        bound, margin = deviation_bound(6, 10, 1.0, 1.2)
        c1 = 2 * (6 + 1)
        c2 = (6 + 10) / (10 * (6 + 1))
        expected_margin = 0.5 - c2 * 1.0 / 1.2 ** 2
        assert margin == pytest.approx(expected_margin)
        assert bound == pytest.approx(math.exp(-c1 * expected_margin ** 2))

    def test_zero_variance_bound(self):
        bound, margin = deviation_bound(6, 10, 0.0, 1.0)
        assert margin == 0.5
        assert bound == pytest.approx(math.exp(-2 * 7 * 0.25))


class TestCheckProp2:
    def test_point_mass_population(self):
        exp = MomExperiment(base=Population("point", 1.0), n=6, k=10,
                            epsilon_r=1.0, trials=2000)
        report = check_prop2(exp, RngStream(5, 9))
        assert report["statistic"] == 0.0
        assert report["bound"] == pytest.approx(math.exp(-2 * 7 * 0.25))
        assert report["pass"]

    def test_normal_population_within_bound(self):
        exp = MomExperiment(base=Population("normal", 1.0, 1.0), n=6, k=10,
                            epsilon_r=2.0, trials=20_000)
        report = check_prop2(exp, RngStream(6, 9))
        assert report["pass"]
        assert report["statistic"] <= report["bound"]

    def test_vacuous_configuration_reported(self):
        exp = MomExperiment(base=Population("normal", 0.0, 10.0), n=2, k=1,
                            epsilon_r=0.5, trials=10)
        report = check_prop2(exp, RngStream(7, 9))
        assert report["vacuous"] and report["pass"]

    def test_exceedance_rate_non_increasing_in_n(self):
        rates = []
        for n in (2, 4, 6, 8):
            exp = MomExperiment(base=Population("normal", 0.0, 1.0), n=n, k=2,
                                epsilon_r=0.9, trials=20_000)
            report = check_prop2(exp, RngStream(8, 9))
            rates.append(report["statistic"])
        slack = 2 * math.sqrt(0.25 / 20_000)
        assert all(rates[i + 1] <= rates[i] + slack for i in range(len(rates) - 1))

    def test_block_contamination_rarely_moves_estimate(self):
        # Two of the seven median inputs arbitrarily far out; a tight base
        # around 1.0 keeps the estimate within 0.5 of the base mean.
        rng = RngStream(9, 9)
        base = Population("normal", 1.0, 0.1)
        hits = 0
        trials = 5000
        for t in range(trials):
            tr = rng.child(t)
            values = np.concatenate([base.sample(tr, 5), [1e9, -1e9]])
            values = values[tr.permutation(7)]
            estimate = mom_estimate(values, 6, 1, tr)
            hits += abs(estimate - base.mean()) <= 0.5
        assert hits / trials >= 0.99


class TestMomRobustness:
    def test_exhaustive_containment(self):
        report = check_mom_robustness()
        assert report["pass"]
        assert report["statistic"] == 0
        assert report["trials"] > 0


def _separated_cache():
    # Class 0: members 0..5 clean (loss 0.5) and 6..9 noisy (loss 3.0).
    labels = np.zeros(10, dtype=np.int64)
    truth = labels.copy()
    truth[6:] = 1
    ds = Dataset(np.zeros((10, 1)), labels, 2, true_labels=truth)
    loss = np.concatenate([np.full(6, 0.5), np.full(4, 3.0)])
    return ds, LossCache(loss=loss, loss_rml=loss.copy(), epoch=0)


class TestCheckCor1:
    def test_separated_losses_gain_clean_mass(self):
        ds, cache = _separated_cache()
        report = check_cor1(ds, cache)
        assert report["premise_holds"]
        assert report["clean_mass_processed"] > report["clean_mass_plain"]
        assert report["pass"]

    def test_identical_losses_equal_mass(self):
        labels = np.zeros(8, dtype=np.int64)
        truth = labels.copy()
        truth[4:] = 1
        ds = Dataset(np.zeros((8, 1)), labels, 2, true_labels=truth)
        loss = np.full(8, 1.7)
        report = check_cor1(ds, LossCache(loss, loss.copy(), 0))
        assert report["clean_mass_processed"] == pytest.approx(report["clean_mass_plain"])
        assert report["pass"]

    def test_trained_cache_direction(self):
        from rml_lab.data import feature_stats, make_blobs, standardize
        from rml_lab.model import init_model, init_optimizer
        from rml_lab.noise import inject_symmetric
        from rml_lab.rml import empty_cache, refresh_cache
        from rml_lab.trainer import RunConfig, train_ce

        ds = make_blobs(5, 60, 4, 5.0, RngStream(10))
        ds = inject_symmetric(ds, 0.4, RngStream(10, 2))
        mean, std = feature_stats(ds.features)
        ds = standardize(ds, mean, std)
        model = init_model("linear", ds.dim, 5, RngStream(10, 4))
        opt = init_optimizer(model, 0.5, 40)
        model, _ = train_ce(ds, model, opt,
                            RunConfig(mode="ce", total_epochs=40, batch_size=64, seed=10))
        cache = refresh_cache(empty_cache(ds.n_samples), ds, model,
                              RegroupParams(n=2, k=5), RngStream(10, 12))
        report = check_cor1(ds, cache)
        assert report["premise_holds"]
        assert report["pass"]
