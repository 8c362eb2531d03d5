import itertools

import numpy as np
import pytest

from gklkit.attack import AttackConfig, attack_objective, pgd_attack, robust_accuracy
from gklkit.dataset import make_blobs
from gklkit.model import MlpModel
from gklkit.numerics import Rng
from gklkit.pipeline import accuracy


@pytest.fixture
def model():
    return MlpModel.init([2, 16, 3], Rng(11))


@pytest.fixture
def data():
    return make_blobs(Rng(1), 3, 40, radius=1.0, sigma=0.4)


class TestConfig:
    def test_defaults(self):
        assert AttackConfig(0.2).step_size == pytest.approx(0.05)
        assert AttackConfig(0.0).step_size > 0
        t, e = AttackConfig.training(0.1), AttackConfig.evaluation(0.1)
        assert (t.steps, t.random_start, t.objective) == (10, True, "kl_to_natural")
        assert (e.steps, e.random_start, e.objective) == (20, False, "cross_entropy")

    @pytest.mark.parametrize("kw", [dict(epsilon=-0.1), dict(epsilon=0.1, steps=0),
                                    dict(epsilon=0.1, step_size=0.0), dict(epsilon=0.1, objective="cw")])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            AttackConfig(**kw)


class TestPgd:
    def test_zero_epsilon(self, model, data):
        x = data.inputs[:10]
        adv = pgd_attack(model, x, AttackConfig(0.0, random_start=True), labels=data.labels[:10], rng=Rng(0))
        np.testing.assert_array_equal(adv, x)

    def test_fgsm(self, model, data):
        x, y = data.inputs[:10], data.labels[:10]
        cfg = AttackConfig(0.1, step_size=0.1, steps=1, random_start=False)
        logits, cache = model.forward(x)
        s = np.exp(logits - logits.max(1, keepdims=True))
        s /= s.sum(1, keepdims=True)
        s[np.arange(10), y] -= 1
        grad = model.input_gradient(cache, s)
        np.testing.assert_allclose(pgd_attack(model, x, cfg, labels=y), x + 0.1 * np.sign(grad), atol=1e-15)

    def test_linear_model_reaches_corner_optimum(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(3, 2))
        m = MlpModel([3, 2], [w], [rng.normal(size=2)])
        x = rng.normal(size=(8, 3))
        y = rng.integers(0, 2, 8)
        eps = 0.3
        cfg = AttackConfig(eps, steps=10, random_start=False)
        adv = pgd_attack(m, x, cfg, labels=y)
        # closed form: push each coordinate against the true-class margin direction
        direction = w[:, y].T - w[:, 1 - y].T
        np.testing.assert_allclose(adv, x - eps * np.sign(direction), atol=1e-12)
        # brute force over the ball's corners (the CE of a linear model is maximised at one)
        for i in range(8):
            best = max(attack_objective(m, x[i] + eps * np.array(c), cfg, labels=[y[i]])[0]
                       for c in itertools.product((-1, 1), repeat=3))
            assert attack_objective(m, adv[i], cfg, labels=[y[i]])[0] == pytest.approx(best, rel=1e-12)

    @pytest.mark.parametrize("objective", ["cross_entropy", "kl_to_natural"])
    def test_stays_in_ball_and_box(self, model, data, objective):
        x = data.inputs
        cfg = AttackConfig(0.5, steps=7, random_start=True, objective=objective)
        box = (-1.0, 1.0)
        adv = pgd_attack(model, x, cfg, labels=data.labels, natural_logits=model.logits(x), rng=Rng(2), box=box)
        assert np.max(np.abs(adv - x)) <= 0.5 + 1e-12
        inside = (x >= -1) & (x <= 1)
        assert np.all((adv[inside] >= -1.0) & (adv[inside] <= 1.0))

    def test_more_steps_do_not_lower_the_objective(self, model, data):
        x, y = data.inputs, data.labels
        short = AttackConfig(0.2, step_size=0.02, steps=5, random_start=False)
        long = AttackConfig(0.2, step_size=0.02, steps=10, random_start=False)
        a = attack_objective(model, pgd_attack(model, x, short, labels=y), short, labels=y)
        b = attack_objective(model, pgd_attack(model, x, long, labels=y), long, labels=y)
        assert np.mean(b >= a - 1e-9) >= 0.95

    def test_increases_loss(self, model, data):
        x, y = data.inputs, data.labels
        cfg = AttackConfig.evaluation(0.2)
        clean = attack_objective(model, x, cfg, labels=y)
        adv = attack_objective(model, pgd_attack(model, x, cfg, labels=y), cfg, labels=y)
        assert np.all(adv >= clean - 1e-12)

    def test_kl_objective_zero_at_start(self, model, data):
        x = data.inputs[:5]
        cfg = AttackConfig(0.1, objective="kl_to_natural")
        np.testing.assert_allclose(attack_objective(model, x, cfg, natural_logits=model.logits(x)), 0.0, atol=1e-15)

    def test_missing_inputs(self, model, data):
        with pytest.raises(ValueError, match="labels"):
            pgd_attack(model, data.inputs, AttackConfig(0.1, random_start=False))
        with pytest.raises(ValueError, match="natural"):
            pgd_attack(model, data.inputs, AttackConfig(0.1, random_start=False, objective="kl_to_natural"))
        with pytest.raises(ValueError, match="rng"):
            pgd_attack(model, data.inputs, AttackConfig(0.1), labels=data.labels)


class TestRobustAccuracy:
    def test_zero_epsilon_is_clean(self, model, data):
        assert robust_accuracy(model, data, AttackConfig(0.0, random_start=False)) == accuracy(model, data)

    def test_monotone_in_epsilon(self, model, data):
        accs = [robust_accuracy(model, data, AttackConfig.evaluation(e)) for e in (0.0, 0.05, 0.1)]
        slack = 1 / len(data)
        assert accs[1] <= accs[0] + slack and accs[2] <= accs[1] + slack

    def test_random_model_is_near_chance(self):
        data = make_blobs(Rng(0), 2, 100, radius=1.0, sigma=0.5)
        accs = [robust_accuracy(MlpModel.init([2, 8, 2], Rng(s)), data, AttackConfig.evaluation(0.05))
                for s in range(20)]
        assert abs(np.mean(accs) - 0.5) <= 0.1

    def test_deterministic_given_seed(self, model, data):
        cfg = AttackConfig(0.2)
        assert robust_accuracy(model, data, cfg, Rng(3)) == robust_accuracy(model, data, cfg, Rng(3))
