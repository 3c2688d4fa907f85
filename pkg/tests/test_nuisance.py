import numpy as np
import pytest

from app.core.errors import ConfigurationError, FitError
from app.services.nuisance import (
    ConstantRegressor,
    NuisanceOptions,
    fit_outcome,
    fit_propensity,
    fit_pseudo_outcome_regression,
    fit_smoother,
    register_smoother,
)


def _sample(n: int = 3000, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    covariates = rng.uniform(-1, 1, size=(n, 2))
    treatment = (rng.uniform(size=n) < (2 + covariates[:, 0]) / 4).astype(float)
    outcome = treatment + covariates @ np.array([1.0, 0.5]) + 0.1 * rng.normal(size=n)
    return covariates, treatment, outcome


def test_propensity_is_truncated() -> None:
    covariates, treatment, _ = _sample()
    rule = fit_propensity(covariates, treatment, epsilon=0.3)
    predictions = rule.predict(covariates)
    assert predictions.min() >= 0.3
    assert predictions.max() <= 0.7


def test_propensity_without_covariates_is_arm_share() -> None:
    covariates, treatment, _ = _sample()
    rule = fit_propensity(covariates[:, []], treatment)
    assert rule.method == "constant"
    np.testing.assert_allclose(rule.predict(covariates[:5, []]), treatment.mean())


def test_propensity_needs_both_arms() -> None:
    with pytest.raises(FitError):
        fit_propensity(np.zeros((4, 1)), np.ones(4))


@pytest.mark.parametrize("method", ["linear", "knn", "nadaraya-watson"])
def test_outcome_smoothers_track_the_regression(method: str) -> None:
    covariates, treatment, outcome = _sample()
    rule = fit_outcome(covariates, treatment, outcome, arm=1, method=method)
    truth = 1 + covariates @ np.array([1.0, 0.5])
    assert np.mean((rule.predict(covariates) - truth) ** 2) < 0.05


def test_pseudo_outcome_regression_uses_other_arm() -> None:
    covariates, treatment, outcome = _sample()
    rule = fit_outcome(covariates, treatment, outcome, arm=1)
    pseudo = fit_pseudo_outcome_regression(covariates, treatment, arm=1, kept=(0,), outcome_rule=rule)
    # mu_1 is linear, so E{mu_1(X) | A=0, X_1} = 1 + X_1 + 0.5 E(X_2) = 1 + X_1
    grid = np.linspace(-0.9, 0.9, 7)[:, None]
    np.testing.assert_allclose(pseudo.predict(grid), 1 + grid[:, 0], atol=0.1)


def test_custom_smoother_registration() -> None:
    register_smoother("zero", lambda x, y, options: ConstantRegressor(0.0))
    model = fit_smoother(np.ones((3, 1)), np.arange(3.0), "zero", NuisanceOptions())
    np.testing.assert_array_equal(model.predict(np.ones((2, 1))), [0.0, 0.0])


def test_unknown_smoother() -> None:
    with pytest.raises(ConfigurationError):
        fit_smoother(np.ones((3, 1)), np.arange(3.0), "forest", NuisanceOptions())
