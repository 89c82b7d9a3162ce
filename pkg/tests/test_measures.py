import math

import numpy as np
import pytest

from src.errors import DivergentMomentError, DomainError, InvalidParameterError
from src.measures import (
    LevyDensity,
    beta_from_pi,
    limit_measure,
    moment_mk,
    moment_mk_beta,
    pi_from_beta,
    pi_from_law,
    pi_from_rho,
)
from src.dislocation_laws import get_law
from src.testfunctions import TestFunction, get_testfn


class TestTransforms:
    def test_uniform_gives_exponential(self, uniform_pi):
        x = np.array([0.0, 0.3, math.log(2.0), 1.0, 5.0])
        np.testing.assert_allclose(uniform_pi.density(x), 2.0 * np.exp(-2.0 * x), rtol=1e-12)
        assert uniform_pi.density(np.array([-0.1]))[0] == 0.0
        assert uniform_pi.mass() == pytest.approx(1.0, abs=1e-10)

    def test_tail(self, uniform_pi):
        x = np.array([0.0, 0.5, 2.0])
        np.testing.assert_allclose(uniform_pi.tail(x), np.exp(-2.0 * x), atol=1e-10)

    def test_sampler_mean(self, uniform_pi):
        steps = uniform_pi.sample(np.random.default_rng(1).random(50_000))
        assert abs(np.mean(steps) - 0.5) < 0.01

    def test_beta_of_uniform(self, uniform_pi):
        beta = beta_from_pi(uniform_pi)
        a = np.array([0.1, 0.5, 0.9])
        np.testing.assert_allclose(beta(a), 2.0 * a, rtol=1e-10)
        assert beta.mass() == pytest.approx(1.0, abs=1e-10)
        beta.verify()

    def test_beta_domain(self, uniform_pi):
        beta = beta_from_pi(uniform_pi)
        with pytest.raises(DomainError):
            beta(np.array([0.0]))
        with pytest.raises(DomainError):
            beta(np.array([1.0]))

    def test_round_trip(self, uniform_pi):
        back = pi_from_beta(beta_from_pi(uniform_pi))
        x = np.linspace(0.0, 6.0, 13)
        np.testing.assert_allclose(back.density(x), uniform_pi.density(x), rtol=1e-12)

    def test_rho_needs_binary_law(self, dyadic_law):
        with pytest.raises(InvalidParameterError):
            pi_from_rho(dyadic_law)

    def test_discrete(self, dyadic_law):
        pi = pi_from_law(dyadic_law)
        assert not pi.spread_out
        assert moment_mk(pi, 1) == pytest.approx(math.log(2.0))
        np.testing.assert_allclose(pi.tail(np.array([0.0, 1.0])), [1.0, 0.0])


class TestMoments:
    @pytest.mark.parametrize("k, expected", [(1, 0.5), (2, 0.5), (3, 0.75)])
    def test_exponential_moments(self, uniform_pi, k, expected):
        assert moment_mk(uniform_pi, k) == pytest.approx(expected, rel=1e-9)

    def test_log_scale_agrees(self, beta22_law):
        pi = pi_from_law(beta22_law)
        beta = beta_from_pi(pi)
        for k in (1, 2):
            assert moment_mk_beta(beta, k) == pytest.approx(moment_mk(pi, k), rel=1e-7)

    def test_bad_order(self, uniform_pi):
        with pytest.raises(InvalidParameterError):
            moment_mk(uniform_pi, 0)

    def test_divergent(self):
        heavy = LevyDensity(
            name="heavy",
            pi=lambda x: 1.0 / (1.0 + np.asarray(x)) ** 2,
            kappa1=1.0,
            kappa2=1.0,
            quadrature_cutoff=50.0,
        )
        with pytest.raises(DivergentMomentError):
            moment_mk(heavy, 1)


class TestLimitMeasure:
    @pytest.mark.parametrize("fn, expected", [("one", 1.0), ("identity", 2.0 / 3.0), ("square", 0.5)])
    def test_uniform(self, uniform_pi, fn, expected):
        assert limit_measure(uniform_pi, get_testfn(fn)) == pytest.approx(expected, rel=1e-8)

    def test_lattice_has_no_limit(self, dyadic_law):
        with pytest.raises(InvalidParameterError):
            limit_measure(pi_from_law(dyadic_law), get_testfn("identity"))

    @pytest.mark.parametrize("fns", [("one", "square"), ("identity", "sine", "cutoff:0.4")])
    def test_linear_and_bounded(self, uniform_pi, fns):
        rng = np.random.default_rng(3)
        parts = [get_testfn(f) for f in fns]
        coef = rng.normal(size=len(parts))
        combo = TestFunction(
            name="combo",
            func=lambda a: sum(c * p(a) for c, p in zip(coef, parts)),
            sup_norm=float(sum(abs(c) * p.sup_norm for c, p in zip(coef, parts))),
            breakpoints=(0.6,),
        )
        values = [limit_measure(uniform_pi, p) for p in parts]
        assert limit_measure(uniform_pi, combo) == pytest.approx(float(np.dot(coef, values)), abs=1e-8)
        for p, v in zip(parts, values):
            assert abs(v) <= p.sup_norm * (1.0 + 1e-7)
        assert abs(limit_measure(uniform_pi, combo)) <= combo.sup_norm


class TestBetaNearZero:
    def test_uniform(self, uniform_pi):
        val = beta_from_pi(uniform_pi)(np.array([1e-6]))[0]
        assert np.isfinite(val)
        assert val == pytest.approx(2e-6, rel=1e-8)

    def test_beta22(self, beta22_law):
        val = beta_from_pi(pi_from_law(beta22_law))(np.array([1e-6]))[0]
        assert np.isfinite(val)
        assert val >= 0.0


@pytest.mark.parametrize("key", ["binary-uniform", "binary-beta(2,2)", "binary-beta(1,3)"])
def test_round_trip_on_fine_grid(key):
    pi = pi_from_law(get_law(key))
    back = pi_from_beta(beta_from_pi(pi))
    x = np.linspace(0.0, 10.0, 1000)
    np.testing.assert_allclose(back.density(x), pi.density(x), rtol=1e-10, atol=1e-14)
