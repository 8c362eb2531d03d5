import numpy as np
import pytest

from gklkit import gradcheck as gc
from gklkit import divergence as dv
from gklkit.divergence import LogitPair
from gklkit.numerics import Rng


class TestFiniteDiff:
    def test_constant(self):
        p = LogitPair(np.ones((2, 3)), np.zeros((2, 3)))
        np.testing.assert_array_equal(gc.finite_diff(lambda q: 3.0, p, "n"), 0.0)

    def test_quadratic(self):
        x = np.array([[0.3, -1.2, 2.0]])
        p = LogitPair(x, np.zeros_like(x))
        np.testing.assert_allclose(gc.finite_diff(lambda q: float(np.sum(q.o_m ** 2)), p, "m"), 2 * x, atol=1e-9)

    def test_kl_fixture(self):
        g = gc.finite_diff(lambda q: dv.kl_loss(q).value, gc.fixture_pair(), "n")
        np.testing.assert_allclose(g, [[-0.46212, 0.46212]], atol=5e-6)
        np.testing.assert_allclose(g, dv.kl_loss(gc.fixture_pair()).grad_n, atol=1e-7)

    def test_validates(self):
        p = gc.fixture_pair()
        with pytest.raises(ValueError, match="step"):
            gc.finite_diff(lambda q: 0.0, p, "n", step=1e-2)
        with pytest.raises(ValueError, match="side"):
            gc.finite_diff(lambda q: 0.0, p, "x")
        with pytest.raises(ValueError, match="non-finite"):
            gc.finite_diff(lambda q: float("nan"), p, "m")


class TestCompare:
    def test_pass_flag_matches_tolerances(self):
        r = gc.compare("x", [[1.0, 2.0]], [[1.0, 2.0 + 1e-8]], atol=1e-7)
        assert r.passed and r.max_abs == pytest.approx(1e-8)
        r = gc.compare("x", [[1.0, 2.0]], [[1.0, 2.1]], atol=1e-7, rtol=1e-4, where=("grad_n",))
        assert not r.passed
        assert r.where == ("grad_n", 0, 1)
        assert "FAIL" in r.line() and "grad_n/0/1" in r.line()

    def test_shape_mismatch_fails(self):
        assert not gc.compare("x", np.zeros((1, 2)), np.zeros((1, 3)), atol=1).passed


class TestTrials:
    def test_equivalence_fixture_exact(self):
        p = gc.fixture_pair()
        a, b = dv.kl_loss(p), dv.dkl_loss(p, gc.THEOREM_CONFIG)
        np.testing.assert_allclose(a.grad_m, b.grad_m, atol=1e-15)

    @pytest.mark.parametrize("detach_m", [False, True])
    def test_equivalence_trial(self, detach_m):
        rep = gc.equivalence_trial(Rng(1), 8, 10, detach_m=detach_m)
        assert rep.passed and rep.max_abs < 1e-10

    @pytest.mark.parametrize("gamma", [0.0, 1.0])
    def test_kernel_trial(self, gamma):
        rep = gc.kernel_equivalence_trial(Rng(2), 4, 50, gamma)
        assert rep.passed and rep.max_abs < 1e-9

    def test_kernel_memory_is_linear(self):
        assert gc.efficient_kernel_peak_bytes(32, 10000) < 100 * 2 ** 20


class TestSuites:
    def test_short_run_passes_and_is_deterministic(self):
        a = gc.run_all(seed=7, trials=1)
        b = gc.run_all(seed=7, trials=1)
        assert all(r.passed for r in a), [r.line() for r in a if not r.passed]
        assert [(r.name, r.max_abs, r.where) for r in a] == [(r.name, r.max_abs, r.where) for r in b]

    def test_injected_fault_is_caught(self):
        def wrong(pair, temperature=1.0):
            r = dv.kl_loss(pair, temperature)
            return dv.LossResult(r.value, r.grad_m, -r.grad_n)

        reports = gc.run_all(seed=0, trials=1, losses={"kl": wrong})
        failed = [r for r in reports if not r.passed]
        assert failed
        assert any("grad_n" in "/".join(map(str, r.where)) for r in failed)

    def test_theorem_sizes(self):
        reps = gc.theorem_suite(trials=2, sizes=((2, 3),))
        assert [r.name for r in reps] == ["theorem B=2 C=3", "theorem detach_m B=8 C=10"]
