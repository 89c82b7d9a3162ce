import math

import numpy as np
import pytest
from scipy import stats

from src.dislocation_laws import BinaryDislocationLaw
from src.errors import AssumptionViolatedError, InvalidParameterError
from src.measures import moment_mk, pi_from_law
from src.quadrature import integrate_1d
from src.tagged_oracle import (
    make_perturbed_rho,
    moment_weight,
    oracle_check_lemma,
    perturbation,
    sample_first_passage,
    sample_first_passages,
    sample_tagged_times,
    two_point_experiment,
)
from src.testfunctions import get_testfn


class TestFirstPassage:
    def test_single_path(self, uniform_pi):
        path = sample_first_passage(uniform_pi, 0.3, seed=1)
        level = -math.log(0.3)
        assert path.level > level
        assert float(np.sum(path.jump_sizes[:-1])) <= level
        assert path.first_passage_time == path.jump_times[-1]
        assert path.overshoot == pytest.approx(path.level - level)
        assert path.chi_at_passage < 0.3

    def test_overshoot_law_of_exponential_steps(self, uniform_pi):
        # Exp(2) steps are memoryless: chi(T)/eta has density 2b on (0, 1)
        eta = 0.01
        times, chi = sample_first_passages(uniform_pi, eta, 20_000, seed=2)
        ratio = chi / eta
        assert np.all(ratio < 1.0) and np.all(times > 0.0)
        se = math.sqrt(1.0 / 18.0 / ratio.size)
        assert abs(np.mean(ratio) - 2.0 / 3.0) < 4.0 * se
        assert stats.kstest(ratio, lambda b: np.clip(b, 0.0, 1.0) ** 2).pvalue > 1e-3

    @pytest.mark.parametrize("eta", [0.0, 1.0, 1.5])
    def test_invalid_eta(self, uniform_pi, eta):
        with pytest.raises(InvalidParameterError):
            sample_first_passages(uniform_pi, eta, 10)

    def test_tagged_times(self, uniform_pi):
        slow = sample_tagged_times(uniform_pi, 1e-3, 1.0, 500, seed=4)
        fast = sample_tagged_times(uniform_pi, 1e-3, 0.0, 500, seed=4)
        assert np.all(slow > 0.0)
        assert np.median(slow) > np.median(fast)
        with pytest.raises(InvalidParameterError):
            sample_tagged_times(uniform_pi, 1e-3, -1.0, 10)


class TestOracle:
    def test_dyadic_is_exact(self, dyadic_law):
        report = oracle_check_lemma(dyadic_law, 0.3, get_testfn("identity"), reps=10, seed=1)
        assert report.exact
        assert report.z == 0.0
        assert report.tree_mean == pytest.approx(0.25)
        assert report.path_mean == pytest.approx(0.25)

    def test_uniform_agrees(self, uniform_law):
        report = oracle_check_lemma(uniform_law, 0.05, get_testfn("identity"), reps=2000, seed=3)
        assert not report.exact
        assert abs(report.z) <= 4.0
        assert set(report.as_dict()) >= {"tree_mean", "path_mean", "z"}

    def test_needs_two_replicates(self, uniform_law):
        with pytest.raises(InvalidParameterError):
            oracle_check_lemma(uniform_law, 0.1, get_testfn("one"), reps=1)


class TestTwoPoint:
    def test_moment_weight(self, beta22_law):
        phi = moment_weight(2)
        val, _ = integrate_1d(lambda a: phi(a) * beta22_law.density(a), 0.5, 1.0)
        assert val == pytest.approx(moment_mk(pi_from_law(beta22_law), 2), rel=1e-7)

    def test_perturbation(self, uniform_law):
        psi, j, r_k = perturbation(uniform_law, 2, 0.5)
        mean, _ = integrate_1d(psi, 0.5, 1.0)
        grid = np.linspace(0.5, 1.0, 2001)
        assert abs(mean) < 1e-10
        assert np.max(np.abs(psi(grid))) <= 0.5 * 2.0 + 1e-12
        assert 1 <= j <= 4
        assert r_k != 0.0

    def test_assumption_needs_positive_floor(self, beta22_law):
        with pytest.raises(AssumptionViolatedError):
            perturbation(beta22_law, 2, 0.5)

    @pytest.mark.parametrize("tau", [1.0, -0.1])
    def test_bad_tau(self, uniform_law, tau):
        with pytest.raises(InvalidParameterError):
            perturbation(uniform_law, 2, tau)

    def test_needs_binary_law(self, dyadic_law):
        with pytest.raises(InvalidParameterError):
            perturbation(dyadic_law, 2, 0.5)

    def test_unperturbed_cases(self, uniform_law):
        assert make_perturbed_rho(uniform_law, 2, 0.0, 0.5) is uniform_law
        assert make_perturbed_rho(uniform_law, 2, 0.01, 0.0) is uniform_law

    def test_perturbed_law(self, uniform_law):
        rho = make_perturbed_rho(uniform_law, 2, 0.01, 0.5)
        grid = np.linspace(0.5, 1.0, 501)
        assert np.all(rho.density(grid) >= 1.0)
        mass, _ = integrate_1d(rho.density, 0.5, 1.0)
        assert mass == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("tau", [0.1, 0.5, 0.9])
    @pytest.mark.parametrize("eps", [1e-2, 0.5, 0.9])
    @pytest.mark.parametrize("which", ["uniform", "linear"])
    def test_perturbed_floor(self, uniform_law, which, tau, eps):
        base = uniform_law if which == "uniform" else BinaryDislocationLaw(
            name="linear", rho=lambda a: 2.0 + 4.0 * (np.asarray(a, dtype=float) - 0.75), lower_bound=1.0
        )
        rho = make_perturbed_rho(base, 2, eps, tau)
        grid = np.linspace(0.5, 1.0, 2001)
        assert np.min(rho.density(grid)) >= (1.0 - tau) * base.infimum() - 1e-12

    @pytest.mark.parametrize("eps", [1e-2, 1e-3, 1e-4])
    def test_experiment(self, uniform_law, eps):
        report = two_point_experiment(uniform_law, 2, eps, 0.5, reps=10, seed=5)
        assert report.n == math.floor(4.0 / eps) + 1
        assert 0.0 < report.kl_exact <= report.kl_ceiling
        assert report.pinsker_exact < 1.0
        assert report.pinsker_exact <= report.tv_ceiling
        assert abs(report.moment_gap - report.moment_gap_predicted) < 1e-6

    def test_experiment_size(self, uniform_law):
        assert two_point_experiment(uniform_law, 1, 1e-2, 0.5, reps=2).n == 401

    def test_experiment_epsilon(self, uniform_law):
        with pytest.raises(InvalidParameterError):
            two_point_experiment(uniform_law, 2, 0.0, 0.5)
