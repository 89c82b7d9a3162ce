import math

import numpy as np
import pytest

from src import harness, simulator
from src.main import apply_config
from src.errors import BudgetExceededError, DegenerateFitError, InvalidParameterError
from src.harness import (
    StudyConfig,
    compare_sigma_rules,
    fit_rate,
    hash_mapping,
    parse_sigma_rule,
    run_study,
)


SMALL = dict(law="binary-uniform", estimator="measure", fn="cutoff:0.4",
             epsilons=(0.1, 0.05, 0.02), reps=5, seed=1)


class TestSigmaRule:
    def test_rules(self):
        assert parse_sigma_rule("0")(0.1) == 0.0
        assert parse_sigma_rule("eps^2")(0.1) == pytest.approx(0.01)
        assert parse_sigma_rule("eps ^ 1.5")(0.01) == pytest.approx(1e-3)
        assert parse_sigma_rule(0.001)(0.5) == 0.001

    @pytest.mark.parametrize("rule", ["-1", "eps^x", "sqrt(eps)"])
    def test_bad(self, rule):
        with pytest.raises(InvalidParameterError):
            parse_sigma_rule(rule)


class TestStudyConfig:
    @pytest.mark.parametrize(
        "change",
        [
            {"estimator": "median"},
            {"epsilons": (0.01, 0.1)},
            {"epsilons": (0.1, 1.5)},
            {"epsilons": ()},
            {"reps": 1},
            {"error_power": 3.0},
            {"sigma_rule": "eps^x"},
        ],
    )
    def test_validation(self, change):
        with pytest.raises(InvalidParameterError):
            StudyConfig(**{**SMALL, **change})

    def test_from_mapping(self):
        cfg = StudyConfig.from_mapping({"eps": "0.1, 0.01", "reps": 3, "sigma-rule": "eps^2", "bogus": 1, "mu": None})
        assert cfg.epsilons == (0.1, 0.01)
        assert cfg.sigma_rule == "eps^2"
        assert cfg.reps == 3
        assert cfg.mu is None

    def test_from_yaml(self, tmp_path):
        path = tmp_path / "study.yaml"
        path.write_text("law: binary-beta(2,2)\nestimator: m1\nepsilons: [0.1, 0.01, 0.001]\nreps: 10\n",
                        encoding="utf-8")
        cfg = StudyConfig.from_yaml(path, overrides={"reps": 20, "seed": None})
        assert cfg.law == "binary-beta(2,2)"
        assert cfg.epsilons == (0.1, 0.01, 0.001)
        assert cfg.reps == 20
        assert cfg.seed == 0

    def test_hash(self):
        a = StudyConfig(**SMALL)
        assert a.config_hash() == StudyConfig(**SMALL).config_hash()
        assert a.config_hash() == StudyConfig(**SMALL, csv="x.csv", workers=4).config_hash()
        assert a.config_hash() != StudyConfig(**{**SMALL, "reps": 6}).config_hash()
        assert len(a.config_hash()) == 16
        assert hash_mapping({"b": 1, "a": 2}) == hash_mapping({"a": 2, "b": 1})


class TestFitRate:
    def test_exact_power_law(self):
        fit = fit_rate([(1e-1, 1e-2), (1e-2, 1e-4), (1e-3, 1e-6)])
        assert fit.slope == pytest.approx(2.0)
        assert fit.slope_se == pytest.approx(0.0, abs=1e-9)
        assert fit.intercept == pytest.approx(0.0, abs=1e-9)
        assert not fit.exact

    def test_noisy_slope(self):
        eps = np.logspace(-1, -4, 6)
        mse = 3.0 * eps * np.exp([0.1, -0.1, 0.05, -0.05, 0.1, -0.1])
        fit = fit_rate(list(zip(eps, mse)))
        assert fit.slope == pytest.approx(1.0, abs=0.1)
        assert fit.slope_se > 0.0

    def test_degenerate(self):
        with pytest.raises(DegenerateFitError):
            fit_rate([(1e-1, 0.0), (1e-2, 1e-4), (1e-3, 1e-6)])
        with pytest.raises(DegenerateFitError):
            fit_rate([(1e-2, 1e-2), (1e-2, 1e-4), (1e-2, 1e-6)])
        with pytest.raises(InvalidParameterError):
            fit_rate([(1e-1, 1e-2), (1e-2, 1e-4)])


class TestRunStudy:
    def test_deterministic(self):
        cfg = StudyConfig(**SMALL)
        first, second = run_study(cfg), run_study(cfg)
        assert [r.replicate_values for r in first.results] == [r.replicate_values for r in second.results]
        assert len(first.results) == 3
        assert first.results[0].seeds == first.results[2].seeds
        assert first.fit is not None and math.isfinite(first.fit.slope)
        assert first.estimator_config["kappa1"] == 2.0

    def test_moment_reference(self):
        study = run_study(StudyConfig(**{**SMALL, "estimator": "m1", "epsilons": (0.1, 0.05), "gamma_rule": "power:0.05"}))
        assert study.results[0].reference == pytest.approx(0.5)
        assert study.fit is None

    def test_lattice_has_no_reference(self):
        study = run_study(StudyConfig(**{**SMALL, "law": "dyadic", "fn": "identity"}))
        assert all(r.reference is None and r.mse is None for r in study.results)
        assert study.fit is None

    def test_budget_flushes_finished_epsilons(self, monkeypatch):
        monkeypatch.setattr(simulator, "MAX_FRAGMENTS", 2000)
        flushed = []
        cfg = StudyConfig(**{**SMALL, "epsilons": (1e-1, 1e-2, 1e-4), "reps": 2})
        with pytest.raises(BudgetExceededError):
            run_study(cfg, on_partial=flushed.append)
        assert len(flushed) == 1
        assert [r.epsilon for r in flushed[0].results] == [1e-1, 1e-2]

    def test_configured_defaults_reach_the_study(self, monkeypatch):
        apply_config({
            "observation": {"gamma0": 0.3},
            "estimators": {"N": 3, "mu_delta": 0.02, "gamma_rule": "power:0.3"},
        })
        seen = []
        real = harness.simulate_noisy

        def spy(*args, **kwargs):
            obs = real(*args, **kwargs)
            seen.append(obs.gamma0)
            return obs

        monkeypatch.setattr(harness, "simulate_noisy", spy)
        study = run_study(StudyConfig(**{**SMALL, "epsilons": (0.1,), "reps": 2}))
        assert seen == [0.3, 0.3]
        assert study.config.gamma0 == 0.3 and study.config.N == 3
        assert study.estimator_config["gamma0"] == 0.3
        assert study.estimator_config["mu_delta"] == 0.02
        assert study.estimator_config["gamma_rule"] == "power:0.3:1"

    def test_explicit_fields_beat_configured_defaults(self):
        apply_config({"observation": {"gamma0": 0.3}})
        study = run_study(StudyConfig(**{**SMALL, "epsilons": (0.1,), "reps": 2, "gamma0": 0.6}))
        assert study.config.gamma0 == 0.6
        assert all(r.config["gamma0"] == 0.6 for r in study.results)

    def test_threads_match_serial(self):
        serial = run_study(StudyConfig(**SMALL))
        threaded = run_study(StudyConfig(**SMALL, workers=3))
        assert [r.replicate_values for r in serial.results] == [r.replicate_values for r in threaded.results]


class TestCompareSigmaRules:
    def test_same_rule_is_identical(self):
        cfg = StudyConfig(**{**SMALL, "epsilons": (0.1, 0.05)})
        rows = compare_sigma_rules(cfg, "0")
        assert [eps for eps, _, _ in rows] == [0.1, 0.05]
        assert all(diff == 0.0 for _, diff, _ in rows)

    def test_other_rule(self):
        cfg = StudyConfig(**{**SMALL, "epsilons": (0.1, 0.05)})
        rows = compare_sigma_rules(cfg, "eps^2")
        assert all(math.isfinite(diff) and diff >= 0.0 and se > 0.0 for _, diff, se in rows)
