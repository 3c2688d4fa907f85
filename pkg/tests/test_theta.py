import numpy as np
import pytest

from app.core.errors import ConfigurationError
from app.services.theta import eval_omega, fit_theta, fit_theta_bundle, moment_root, sieve_basis


def test_omega_is_asymmetric() -> None:
    assert eval_omega(3.0, 1.0, 0.5) == pytest.approx(2.0)
    assert eval_omega(0.0, 1.0, 0.5) == pytest.approx(-0.5)
    np.testing.assert_allclose(eval_omega(np.array([0.0, 2.0]), 1.0, 4.0), [-4.0, 1.0])


def test_unit_multiplier_gives_least_squares() -> None:
    rng = np.random.default_rng(1)
    covariates = rng.uniform(size=(2000, 2))
    outcome = 1.0 + covariates @ np.array([2.0, -1.0]) + rng.normal(size=2000)
    rule = fit_theta(covariates, outcome, t=1.0, sign="-")
    expected = np.linalg.lstsq(sieve_basis(covariates), outcome, rcond=None)[0]
    np.testing.assert_allclose(rule.coef, expected, atol=1e-8)


def test_intercept_only_fit_matches_pointwise_root() -> None:
    rng = np.random.default_rng(2)
    outcome = rng.exponential(size=4000)
    empty = np.empty((4000, 0))
    for sign in ("-", "+"):
        rule = fit_theta(empty, outcome, t=3.0, sign=sign)
        assert rule.coef[0] == pytest.approx(moment_root(outcome, 3.0, sign), abs=1e-6)
        assert abs(rule.moment_residual) < 1e-6


def test_thresholds_order_with_multiplier() -> None:
    rng = np.random.default_rng(3)
    outcome = rng.normal(size=3000)
    empty = np.empty((3000, 0))
    low = fit_theta(empty, outcome, t=4.0, sign="-").coef[0]
    high = fit_theta(empty, outcome, t=4.0, sign="+").coef[0]
    assert low < outcome.mean() < high


def test_nu_uses_below_probability() -> None:
    rng = np.random.default_rng(4)
    covariates = rng.uniform(size=(3000, 1))
    outcome = covariates[:, 0] + rng.normal(size=3000)
    rule = fit_theta(covariates, outcome, t=2.0, sign="-")
    below = rule.below_probability(covariates)
    np.testing.assert_allclose(rule.nu(covariates), 1 - below + 2.0 * below)


def test_bundle_fits_both_arms_and_sides() -> None:
    rng = np.random.default_rng(5)
    covariates = rng.uniform(size=(2000, 1))
    treatment = (rng.uniform(size=2000) < 0.5).astype(float)
    outcome = treatment + covariates[:, 0] + rng.normal(size=2000)
    bundle = fit_theta_bundle(covariates, treatment, outcome, t=2.0)
    values = bundle.evaluate(covariates)
    assert np.all(values.treated_plus.theta >= values.treated_minus.theta)
    assert np.all(values.control_plus.theta >= values.control_minus.theta)


def test_unknown_basis() -> None:
    with pytest.raises(ConfigurationError):
        sieve_basis(np.zeros((3, 1)), "cubic")


@pytest.mark.parametrize("t", [1.5, 2.0, 4.0])
def test_uniform_outcome_threshold_closed_form(t: float) -> None:
    rng = np.random.default_rng(6)
    covariates = rng.uniform(size=(50_000, 1))
    outcome = rng.uniform(size=50_000)
    rule = fit_theta(covariates, outcome, t=t, sign="-")
    theta = 1 / (1 + np.sqrt(t))
    assert rule.predict(covariates).mean() == pytest.approx(theta, abs=5e-3)
    # nu^- = P(Y >= theta) + t P(Y < theta) for Unif(0, 1)
    assert rule.nu(covariates).mean() == pytest.approx(1 + (t - 1) * theta, abs=1e-2)


def test_uniform_outcome_nu_at_two() -> None:
    rng = np.random.default_rng(7)
    covariates = rng.uniform(size=(50_000, 1))
    rule = fit_theta(covariates, rng.uniform(size=50_000), t=2.0, sign="-")
    assert rule.nu(covariates).mean() == pytest.approx(1.4142, abs=1e-2)


def test_thresholds_are_monotone_in_multiplier() -> None:
    rng = np.random.default_rng(8)
    outcome = rng.normal(size=4000)
    empty = np.empty((4000, 0))
    grid = [1.0, 1.5, 2.0, 3.0, 5.0, 8.0]
    lower = [fit_theta(empty, outcome, t=t, sign="-").coef[0] for t in grid]
    upper = [fit_theta(empty, outcome, t=t, sign="+").coef[0] for t in grid]
    assert np.all(np.diff(lower) < 0)
    assert np.all(np.diff(upper) > 0)
    assert lower[0] == pytest.approx(upper[0])


def test_bundle_collapses_to_arm_regressions_at_unit_multiplier() -> None:
    rng = np.random.default_rng(9)
    covariates = rng.uniform(size=(3000, 2))
    treatment = (rng.uniform(size=3000) < 0.4).astype(float)
    outcome = 2 * treatment + covariates @ np.array([1.0, -0.5]) + rng.normal(size=3000)
    values = fit_theta_bundle(covariates, treatment, outcome, t=1.0).evaluate(covariates)
    for arm, plus, minus in ((1, values.treated_plus, values.treated_minus), (0, values.control_plus, values.control_minus)):
        rows = treatment == arm
        coef = np.linalg.lstsq(sieve_basis(covariates[rows]), outcome[rows], rcond=None)[0]
        np.testing.assert_allclose(plus.theta, sieve_basis(covariates) @ coef, atol=1e-8)
        np.testing.assert_allclose(minus.theta, plus.theta, atol=1e-8)
        np.testing.assert_allclose(plus.nu, 1.0)
