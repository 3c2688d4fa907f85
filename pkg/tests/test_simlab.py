import math

import numpy as np
import pytest

from app.core.errors import ConfigurationError
from app.services.crossfit import CrossFitter
from app.services.data import make_folds
from app.services.experiments import EXPERIMENTS, get_experiment
from app.services.simlab import (
    LOG3,
    PROXY_EXAMPLE_1,
    FiniteSupportDGP,
    FiniteSupportNuisances,
    LinearProbabilityDGP,
    LogisticDGP,
    gen_proxy_example_1,
    proxy_example_2_dgp,
    proxy_truths,
    solve_proxy_coefficient,
    verify_proxy_truths,
)


def test_samples_are_deterministic_per_seed() -> None:
    first = gen_proxy_example_1(200, seed=5)
    second = gen_proxy_example_1(200, seed=5)
    other = gen_proxy_example_1(200, seed=6)
    np.testing.assert_array_equal(first.dataset.outcome, second.dataset.outcome)
    np.testing.assert_array_equal(first.hidden, second.hidden)
    assert not np.array_equal(first.dataset.outcome, other.dataset.outcome)
    assert first.dataset.names == ("X",)
    assert first.hidden.shape == (200, 1)


def test_propensity_must_stay_in_unit_interval() -> None:
    with pytest.raises(ConfigurationError):
        LinearProbabilityDGP(treatment_slopes=(1.5, 1.0), outcome_slopes=(1.0, 1.0))


def test_one_dimensional_adjustment_closed_form() -> None:
    b, c = 1.2, 0.5
    dgp = LinearProbabilityDGP(treatment_slopes=(b, c), outcome_slopes=(1.0, 2.0), effect=0.5)
    expected = 0.5 + 2.0 * c / 12 * (4 / b) * math.log((2 + b) / (2 - b))
    assert dgp.adjusted_mean_difference([0]) == pytest.approx(expected, abs=1e-8)
    assert dgp.adjusted_mean_difference([0, 1]) == pytest.approx(0.5)
    assert dgp.adjusted_mean_difference([]) == pytest.approx(0.5 + (b * 1.0 + c * 2.0) / 3)


def test_proxy_example_truths() -> None:
    verify_proxy_truths()
    truths = proxy_truths(PROXY_EXAMPLE_1)
    assert truths["psi_star"] == pytest.approx(0.0, abs=1e-10)
    assert truths["psi_x"] == pytest.approx(LOG3 / 3, abs=1e-8)
    assert truths["psi_empty"] == pytest.approx(2 / 3, abs=1e-8)
    assert truths["lower_at_1"] > 0


def test_proxy_coefficient_solves_bias_equality() -> None:
    coefficient = solve_proxy_coefficient()
    assert coefficient == pytest.approx(0.914, abs=1e-3)
    assert coefficient**2 == pytest.approx(0.835, abs=1e-3)
    truths = proxy_truths(proxy_example_2_dgp(coefficient))
    gap = LOG3 / (6 * LOG3 - 3)
    assert truths["psi_x"] == pytest.approx(gap, abs=1e-8)
    assert truths["upper_at_1"] == pytest.approx(2 * gap, abs=1e-8)
    assert truths["lower_at_1"] <= 1e-8


def test_logistic_design_lives_on_unit_cube() -> None:
    data = LogisticDGP(intercept=0.0, treatment_slopes=(1.0, 0.5), outcome_slopes=(1.0, 1.0), noise="uniform").sample(500, 1)
    assert data.covariates.min() >= 0.0
    assert data.covariates.max() <= 1.0
    assert set(np.unique(data.treatment)) == {0.0, 1.0}


def test_finite_support_sample_matches_atoms() -> None:
    dgp = FiniteSupportDGP.random(seed=2)
    atoms = dgp.atoms()
    assert atoms.weight.sum() == pytest.approx(1.0)
    data = dgp.sample(40_000, seed=2)
    assert data.outcome.mean() == pytest.approx(atoms.expect(atoms.outcome), abs=0.05)
    assert data.treatment.mean() == pytest.approx(atoms.expect(atoms.treatment), abs=0.02)


def test_exact_nuisances_recover_adjusted_difference() -> None:
    dgp = FiniteSupportDGP.random(seed=4)
    data = dgp.sample(20_000, seed=4)
    fitter = CrossFitter(data, make_folds(20_000, 2, 4), FiniteSupportNuisances(dgp))
    estimate = fitter.amd(fitter.full)
    assert estimate.estimate == pytest.approx(dgp.adjusted_mean_difference((0, 1)), abs=4 * np.std(estimate.phi) / math.sqrt(20_000))


def test_experiment_registry() -> None:
    assert set(EXPERIMENTS) == {
        "coverage-effect-diff",
        "coverage-outcome",
        "coverage-odds",
        "robustness-coverage",
        "regime-map",
        "argmax-selection",
        "proxy-example-1",
        "proxy-example-2",
    }
    with pytest.raises(ConfigurationError):
        get_experiment("coverage-everything")
    with pytest.raises(ConfigurationError):
        get_experiment("regime-map").run({"gamma": 2.0})


def test_coverage_routes_each_model() -> None:
    result = get_experiment("coverage-outcome").run({"n": 600, "reps": 4, "pilot_n": 20_000}, seed=1)
    assert result.name == "coverage-outcome"
    assert result.params["model"] == "outcome"
    assert result.summary["truth_source"] == "pilot"
    assert result.underpowered
    assert len(result.replicates) == 4
    assert result.summary["true_lower"] < result.summary["true_upper"]

    odds = get_experiment("coverage-odds").run({"n": 800, "reps": 2, "pilot_n": 5000}, seed=1)
    assert odds.summary["model"] == "odds"
    assert odds.summary["truth_source"] == "pilot"


def test_coverage_rejects_mismatched_models() -> None:
    with pytest.raises(ConfigurationError):
        get_experiment("coverage-outcome").run({"model": "everything", "reps": 2})
    with pytest.raises(ConfigurationError):
        get_experiment("coverage-odds").run({"nuisance": "analytic", "reps": 2, "pilot_n": 1000})


@pytest.mark.slow
@pytest.mark.parametrize("name", ["coverage-effect-diff", "coverage-outcome", "coverage-odds"])
def test_coverage_experiment_passes_for_each_model(name: str) -> None:
    result = get_experiment(name).run(threads=4)
    assert result.passed, result.checks


def test_regime_map_experiment_passes() -> None:
    result = get_experiment("regime-map").run()
    assert result.passed
    assert result.summary["example_rho_-0.8_rrse_1"] == "under"
    assert result.summary["cells"] == 21 * 11
    assert not result.underpowered


def test_coverage_smoke_run_is_flagged_underpowered() -> None:
    result = get_experiment("coverage-effect-diff").run({"reps": 10, "n_grid": "300,600"}, seed=1)
    assert result.underpowered
    assert result.params["n_grid"] == [300, 600]
    assert len(result.replicates) == 20
    assert "margin_ratio" in result.summary
    assert result.record()["underpowered"] is True


def test_runs_repeat_exactly() -> None:
    first = get_experiment("robustness-coverage").run({"reps": 5, "n": 400}, seed=3)
    second = get_experiment("robustness-coverage").run({"reps": 5, "n": 400}, seed=3, threads=2)
    assert first.replicates.equals(second.replicates)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["proxy-example-1", "proxy-example-2"])
def test_proxy_examples_pass(name: str) -> None:
    assert get_experiment(name).run().passed


@pytest.mark.slow
def test_argmax_misselection_decreases() -> None:
    result = get_experiment("argmax-selection").run(threads=4)
    assert result.checks["strictly_decreasing"]
    assert result.summary["tie_misselection"] > 0.2
