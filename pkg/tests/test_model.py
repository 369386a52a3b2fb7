import numpy as np
import pytest

from rml_lab.data import make_blobs
from rml_lab.model import (
    ModelState,
    NumericalFailure,
    accuracy,
    cosine_lr,
    ema_update,
    forward,
    init_model,
    init_optimizer,
    load_checkpoint,
    loss_and_grad,
    per_sample_ce,
    save_checkpoint,
    sgd_step,
)
from rml_lab.numerics import RngStream, softmax
from rml_lab.trainer import RunConfig, train_ce


def finite_difference_grads(model, x, y, weights, step=1e-5):
    """Central finite differences of the weighted batch-mean loss."""
    def objective():
        losses = per_sample_ce(forward(model, x), y)
        return float(np.mean(weights * losses))

    grads = []
    for p in model.params:
        g = np.zeros_like(p)
        flat_p, flat_g = p.ravel(), g.ravel()
        for j in range(flat_p.size):
            original = flat_p[j]
            flat_p[j] = original + step
            up = objective()
            flat_p[j] = original - step
            down = objective()
            flat_p[j] = original
            flat_g[j] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_case(arch, rng, batch=6, dim=5, classes=4, hidden=6):
    model = init_model(arch, dim, classes, rng, hidden=hidden)
    x = rng.normal(size=(batch, dim))
    y = rng.integers(0, classes, size=batch)
    w = rng.uniform(0.0, 1.5, size=batch)
    return model, x, np.asarray(y), w


class TestForward:
    def test_zero_weights_uniform(self):
        model = ModelState("linear", [np.zeros((3, 4)), np.zeros(4)], 3, 4)
        out = forward(model, np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_allclose(out, 0.25)

    def test_hand_set_linear(self):
        model = ModelState("linear", [np.array([[1.0, -1.0]]), np.zeros(2)], 1, 2)
        out = forward(model, np.array([[1.0]]))
        np.testing.assert_allclose(out[0], softmax([1.0, -1.0]))

    def test_batch_shape(self):
        model = init_model("mlp", 4, 3, RngStream(0), hidden=5)
        out = forward(model, np.zeros((7, 4)))
        assert out.shape == (7, 3)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-10)

    def test_dimension_mismatch(self):
        model = init_model("linear", 4, 3, RngStream(1))
        with pytest.raises(ValueError):
            forward(model, np.zeros((2, 5)))


class TestLossAndGrad:
    def test_unit_weights_match_mean_ce(self):
        rng = RngStream(2)
        model, x, y, _ = random_case("linear", rng)
        ones = np.ones(y.size)
        _, g_default = loss_and_grad(model, x, y)
        _, g_ones = loss_and_grad(model, x, y, ones)
        for a, b in zip(g_default, g_ones):
            np.testing.assert_array_equal(a, b)

    def test_zero_weight_silences_sample(self):
        rng = RngStream(3)
        model, x, y, _ = random_case("linear", rng, batch=4)
        w = np.array([1.0, 0.0, 1.0, 1.0])
        _, grads = loss_and_grad(model, x, y, w)
        # Gradient must equal the one computed with sample 1 removed
        # (weights rescaled by batch size ratio).
        keep = [0, 2, 3]
        _, grads_subset = loss_and_grad(model, x[keep], y[keep], w[keep] * 3 / 4)
        for a, b in zip(grads, grads_subset):
            np.testing.assert_allclose(a, b, atol=1e-12)

    @pytest.mark.parametrize("arch", ["linear", "mlp"])
    def test_finite_difference_check(self, arch):
        rng = RngStream(4)
        worst = 0.0
        for trial in range(10):
            model, x, y, w = random_case(arch, rng.child(trial))
            _, analytic = loss_and_grad(model, x, y, w)
            numeric = finite_difference_grads(model, x, y, w)
            worst = max(worst, max_relative_error(analytic, numeric))
        assert worst < 1e-4

    def test_rejects_negative_weights(self):
        model, x, y, _ = random_case("linear", RngStream(5))
        with pytest.raises(ValueError):
            loss_and_grad(model, x, y, np.array([-1.0, 1, 1, 1, 1, 1]))

    def test_numerical_failure_carries_index(self):
        model = init_model("linear", 2, 2, RngStream(6))
        model.params[0][0, 0] = np.inf
        with pytest.raises(NumericalFailure) as info:
            loss_and_grad(model, np.ones((3, 2)), np.zeros(3, dtype=int))
        assert info.value.sample_index == 0


class TestSgdStep:
    def _scalar_setup(self, momentum, lr):
        model = ModelState("linear", [np.zeros((1, 1)), np.zeros(1)], 1, 1)
        opt = init_optimizer(model, lr, total_epochs=10, lr_min=lr,
                             momentum=momentum, weight_decay=0.0)
        return model, opt

    def test_plain_step(self):
        model, opt = self._scalar_setup(momentum=0.0, lr=0.1)
        sgd_step(model, opt, [np.ones((1, 1)), np.zeros(1)], epoch=0)
        assert model.params[0][0, 0] == pytest.approx(-0.1)

    def test_momentum_two_steps(self):
        # v1 = 1, p1 = -0.1; v2 = 1.9, p2 = -0.29.
        model, opt = self._scalar_setup(momentum=0.9, lr=0.1)
        for _ in range(2):
            sgd_step(model, opt, [np.ones((1, 1)), np.zeros(1)], epoch=0)
        assert model.params[0][0, 0] == pytest.approx(-0.29)

    def test_cosine_endpoints(self):
        model = init_model("linear", 2, 2, RngStream(7))
        opt = init_optimizer(model, 0.1, total_epochs=100, lr_min=1e-4)
        assert cosine_lr(opt, 0) == pytest.approx(0.1)
        assert cosine_lr(opt, 100) == pytest.approx(1e-4)
        assert cosine_lr(opt, 50) == pytest.approx((0.1 + 1e-4) / 2)


class TestEmaUpdate:
    def test_paper_setting(self):
        teacher = ModelState("linear", [np.zeros((1, 1)), np.zeros(1)], 1, 1)
        student = ModelState("linear", [np.ones((1, 1)), np.ones(1)], 1, 1)
        ema_update(teacher, student, 0.999)
        assert teacher.params[0][0, 0] == pytest.approx(0.001)

    def test_lambda_one_fixed_point(self):
        teacher = ModelState("linear", [np.full((1, 1), 3.0), np.zeros(1)], 1, 1)
        student = ModelState("linear", [np.ones((1, 1)), np.ones(1)], 1, 1)
        ema_update(teacher, student, 1.0)
        assert teacher.params[0][0, 0] == 3.0

    def test_lambda_zero_copies(self):
        teacher = ModelState("linear", [np.full((1, 1), 3.0), np.zeros(1)], 1, 1)
        student = ModelState("linear", [np.ones((1, 1)), np.ones(1)], 1, 1)
        ema_update(teacher, student, 0.0)
        assert teacher.params[0][0, 0] == 1.0

    def test_convex_combination(self):
        rng = RngStream(8)
        teacher = init_model("mlp", 3, 2, rng, hidden=4)
        student = init_model("mlp", 3, 2, rng.child(1), hidden=4)
        lows = [np.minimum(t, s) for t, s in zip(teacher.params, student.params)]
        highs = [np.maximum(t, s) for t, s in zip(teacher.params, student.params)]
        ema_update(teacher, student, 0.7)
        for p, lo, hi in zip(teacher.params, lows, highs):
            assert (p >= lo - 1e-15).all() and (p <= hi + 1e-15).all()

    def test_architecture_mismatch(self):
        teacher = init_model("linear", 3, 2, RngStream(9))
        student = init_model("mlp", 3, 2, RngStream(9), hidden=4)
        with pytest.raises(ValueError):
            ema_update(teacher, student, 0.5)


class TestTrainingSanity:
    def test_clean_blobs_reach_high_accuracy(self):
        ds = make_blobs(4, 100, 4, 6.0, RngStream(10))
        from rml_lab.data import feature_stats, standardize

        mean, std = feature_stats(ds.features)
        ds = standardize(ds, mean, std)
        model = init_model("mlp", ds.dim, 4, RngStream(10, 4), hidden=16)
        opt = init_optimizer(model, 0.3, 200)
        config = RunConfig(mode="ce", total_epochs=200, batch_size=64, seed=0)
        model, _ = train_ce(ds, model, opt, config)
        assert accuracy(model, ds) >= 0.99


class TestCheckpoint:
    @pytest.mark.parametrize("arch,hidden", [("linear", 0), ("mlp", 7)])
    def test_roundtrip_exact(self, tmp_path, arch, hidden):
        model = init_model(arch, 5, 3, RngStream(11), hidden=hidden)
        save_checkpoint(model, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.arch == model.arch
        assert (back.dim, back.num_classes, back.hidden) == (5, 3, hidden)
        for a, b in zip(back.params, model.params):
            np.testing.assert_array_equal(a, b)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT")
        with pytest.raises(ValueError):
            load_checkpoint(path)
