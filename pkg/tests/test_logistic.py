import numpy as np
import pytest
from scipy.special import expit

from app.core.errors import DataValidationError, LogisticFitError
from app.services.logistic import fit_logistic, fit_logistic_projection


def _sample(n: int, beta: tuple[float, ...], seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    covariates = rng.uniform(size=(n, len(beta) - 1))
    treatment = (rng.uniform(size=n) < expit(beta[0] + covariates @ np.asarray(beta[1:]))).astype(float)
    return covariates, treatment


def test_fit_recovers_generating_coefficients() -> None:
    covariates, treatment = _sample(100_000, (-1.0, 2.0))
    projection = fit_logistic_projection(covariates, treatment)
    se = np.sqrt(np.diag(projection.coefficient_covariance()))
    assert projection.converged
    assert np.all(np.abs(projection.beta - np.array([-1.0, 2.0])) <= 3 * se)


def test_score_has_zero_mean_at_the_estimate() -> None:
    covariates, treatment = _sample(5000, (0.2, 1.0, -0.5))
    projection = fit_logistic_projection(covariates, treatment)
    np.testing.assert_allclose(projection.score(covariates, treatment).mean(axis=0), 0.0, atol=1e-7)


def test_maximizer_picks_largest_absolute_slope() -> None:
    covariates, treatment = _sample(20_000, (0.0, 0.5, -2.0, 1.0), seed=3)
    projection = fit_logistic_projection(covariates, treatment)
    assert projection.maximizer() == 1
    assert projection.measured_confounding() == pytest.approx(abs(projection.slopes[1]))
    assert projection.runner_up_gap() > 0


def test_separable_treatment_raises() -> None:
    covariates = np.linspace(0, 1, 200)[:, None]
    treatment = (covariates[:, 0] > 0.5).astype(float)
    with pytest.raises(LogisticFitError):
        fit_logistic(covariates, treatment)


def test_projection_requires_unit_cube() -> None:
    covariates, treatment = _sample(100, (0.0, 1.0))
    with pytest.raises(DataValidationError):
        fit_logistic_projection(covariates * 3, treatment)
