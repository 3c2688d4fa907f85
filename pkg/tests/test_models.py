from dataclasses import dataclass

import numpy as np
import pytest

from app.core.errors import DegenerateConfoundingError
from app.services.crossfit import LearnedNuisances
from app.services.data import make_folds
from app.services.models import EffectDifferencesModel, OddsRatioModel, OutcomeModel, derivative_dU_dM, invariance_check
from app.services.nuisance import ConstantRegressor, OutcomeRule, PropensityRule, PseudoOutcomeRule
from app.services.simlab import PROXY_EXAMPLE_1, AnalyticNuisances, LinearProbabilityDGP, LogisticDGP, proxy_truths

GRID = [0.0, 0.5, 1.0, 2.0]
DGP = LinearProbabilityDGP(treatment_slopes=(0.8, 0.6), outcome_slopes=(1.0, 0.5), effect=1.0)


@dataclass(frozen=True)
class ConstantNuisances:
    """Every nuisance ignores covariates, so all adjustment sets give the same estimate."""

    def propensity(self, covariates, treatment, kept) -> PropensityRule:
        return PropensityRule(model=ConstantRegressor(0.5), epsilon=0.01, method="constant")

    def outcome(self, covariates, treatment, outcome, kept, arm) -> OutcomeRule:
        return OutcomeRule(arm=arm, model=ConstantRegressor(0.0), method="constant")

    def pseudo_outcome(self, covariates, treatment, arm, kept, outcome_rule) -> PseudoOutcomeRule:
        return PseudoOutcomeRule(arm=arm, kept=kept, model=ConstantRegressor(0.0))


def _effect_model(n: int = 2000, seed: int = 0) -> EffectDifferencesModel:
    data = DGP.sample(n, seed).dataset
    return EffectDifferencesModel(data, make_folds(n, 2, seed), factory=AnalyticNuisances(DGP))


def test_effect_differences_invariance() -> None:
    model = _effect_model()
    measured = model.measure()
    curve = model.bounds(GRID)
    assert invariance_check(model.sensitivity_upper, curve, measured, "upper")
    assert invariance_check(model.sensitivity_lower, curve, measured, "lower")
    assert curve.ordering_violations() == []
    assert curve.upper[0] == pytest.approx(curve.psi)


def test_effect_differences_tracks_truth() -> None:
    model = _effect_model(n=20_000, seed=3)
    truths = DGP.effect_difference_truths()
    measured = model.measure()
    assert model.psi == pytest.approx(truths["psi"], abs=0.1)
    assert measured.value == pytest.approx(truths["measured"], abs=0.1)
    assert measured.influence.shape == (20_000,)


def test_outcome_model_invariance() -> None:
    data = DGP.sample(3000, 1).dataset
    model = OutcomeModel(data, make_folds(3000, 2, 1), factory=AnalyticNuisances(DGP))
    measured = model.measure()
    curve = model.bounds(GRID)
    assert set(measured.per_arm) == {0, 1}
    assert measured.value > 0
    assert invariance_check(model.sensitivity_upper, curve, measured, "upper")
    assert invariance_check(model.sensitivity_lower, curve, measured, "lower")
    assert curve.ordering_violations() == []


def test_odds_model_invariance_and_ordering() -> None:
    data = LogisticDGP(intercept=-0.5, treatment_slopes=(1.5, -0.3), outcome_slopes=(1.0, 1.0)).sample(1500, 2)
    model = OddsRatioModel(data, make_folds(1500, 2, 2))
    measured = model.measure()
    curve = model.bounds([0.0, 0.5, 1.0])
    assert measured.maximizer == 0
    assert len(measured.per_fold) == 2
    assert invariance_check(model.sensitivity_upper, curve, measured, "upper")
    assert invariance_check(model.sensitivity_lower, curve, measured, "lower")
    assert np.all(curve.lower[1:] < curve.upper[1:])
    assert curve.upper[-1] > curve.upper[0]
    assert curve.lower[-1] < curve.lower[0]


def test_zero_measured_confounding_is_an_error() -> None:
    data = DGP.sample(500, 4).dataset
    model = EffectDifferencesModel(data, make_folds(500, 2, 4), factory=ConstantNuisances())
    with pytest.raises(DegenerateConfoundingError):
        model.measure()


def test_proxy_example_bounds() -> None:
    truths = proxy_truths(PROXY_EXAMPLE_1)
    data = PROXY_EXAMPLE_1.sample(20_000, 7).dataset
    model = EffectDifferencesModel(data, make_folds(20_000, 2, 7), factory=AnalyticNuisances(PROXY_EXAMPLE_1))
    curve = model.bounds([1.0])
    assert data.names == ("X",)
    assert model.psi == pytest.approx(truths["psi_x"], abs=0.1)
    assert curve.measured == pytest.approx(truths["measured"], abs=0.1)
    assert curve.upper[0] == pytest.approx(truths["upper_at_1"], abs=0.15)


ODDS_DGP = LogisticDGP(intercept=-0.5, treatment_slopes=(1.5, -0.3), outcome_slopes=(1.0, 1.0))


def _odds_model(n: int = 1500, seed: int = 2, dgp: LogisticDGP = ODDS_DGP) -> OddsRatioModel:
    return OddsRatioModel(dgp.sample(n, seed), make_folds(n, 2, seed))


@pytest.mark.parametrize("name", ["effect-diff", "outcome", "odds"])
def test_bounds_collapse_to_aipw_at_zero_gamma(name: str) -> None:
    if name == "odds":
        model = _odds_model()
    else:
        data = DGP.sample(2000, 6).dataset
        cls = EffectDifferencesModel if name == "effect-diff" else OutcomeModel
        model = cls(data, make_folds(2000, 2, 6), factory=LearnedNuisances())
    curve = model.bounds([0.0])
    assert curve.upper[0] == pytest.approx(model.psi, abs=1e-8)
    assert curve.lower[0] == pytest.approx(model.psi, abs=1e-8)


def test_odds_derivatives_vanish_at_zero_and_keep_their_sign() -> None:
    model = _odds_model()
    raw = model.evaluate(0.0, gamma=0.0)
    assert raw.upper_derivative == 0.0
    assert raw.lower_derivative == 0.0
    curve = model.bounds([0.0, 0.5, 1.0])
    assert curve.upper_derivative[0] == 0.0
    assert curve.lower_derivative[0] == 0.0
    measured = model.measure()
    for gamma in (0.5, 1.0):
        evaluation = model.evaluate(measured.scaled(gamma), gamma=gamma)
        assert evaluation.upper_derivative > 0
        assert evaluation.lower_derivative < 0


def test_derivative_terms_scale_with_gamma() -> None:
    model = _odds_model()
    cf = model.crossfitter
    _, test = cf.split(0)
    x = cf.covariates[test]
    values = model.bundle(0, 2.0).evaluate(x)
    pi1 = cf.rules(cf.full)[0].propensity.predict(x)
    for side in ("upper", "lower"):
        np.testing.assert_array_equal(derivative_dU_dM(0.0, 2.0, pi1, values, side), 0.0)
        np.testing.assert_allclose(
            derivative_dU_dM(1.0, 2.0, pi1, values, side), 0.5 * derivative_dU_dM(2.0, 2.0, pi1, values, side)
        )


def test_repeated_bounds_calls_do_not_carry_flags(monkeypatch: pytest.MonkeyPatch) -> None:
    model = _odds_model()
    original = model.evaluate

    def flat_upper(scaled, gamma=0.0):
        result = original(scaled, gamma)
        return type(result)(
            upper_values=result.upper_values,
            lower_values=result.lower_values,
            upper_derivative=-1.0,
            lower_derivative=result.lower_derivative,
        )

    monkeypatch.setattr(model, "evaluate", flat_upper)
    first = model.bounds([0.0, 0.5])
    second = model.bounds([0.0, 1.0])
    assert first.flags == ("upper_derivative_clamped@0.5",)
    assert second.flags == ("upper_derivative_clamped@1.0",)
    assert second.upper_derivative[1] > 0


def test_unordered_odds_bounds_are_flagged(monkeypatch: pytest.MonkeyPatch) -> None:
    model = _odds_model()
    original = model.evaluate

    def swapped(scaled, gamma=0.0):
        result = original(scaled, gamma)
        if gamma == 0.0:
            return result
        return type(result)(
            upper_values=result.lower_values,
            lower_values=result.upper_values,
            upper_derivative=result.upper_derivative,
            lower_derivative=result.lower_derivative,
        )

    monkeypatch.setattr(model, "evaluate", swapped)
    curve = model.bounds([0.0, 1.0])
    assert "bounds_unordered@1.0" in curve.flags


def test_odds_measured_confounding_recovers_largest_slope() -> None:
    dgp = LogisticDGP(intercept=0.0, treatment_slopes=(-1.0, 2.0, 0.5), outcome_slopes=(1.0, 1.0, 1.0))
    model = _odds_model(n=20_000, seed=8, dgp=dgp)
    measured = model.measure()
    assert measured.maximizer == 1
    assert measured.value == pytest.approx(2.0, abs=0.25)
    assert measured.components[1].signed > 0
    assert measured.components[0].signed < 0


@pytest.mark.slow
def test_odds_maximizer_is_rarely_wrong() -> None:
    dgp = LogisticDGP(intercept=0.0, treatment_slopes=(-1.0, 2.0, 0.5), outcome_slopes=(1.0, 1.0, 1.0))
    choices = [_odds_model(n=5000, seed=seed, dgp=dgp).measure().maximizer for seed in range(200)]
    assert np.mean(np.asarray(choices) != 1) < 0.05


@pytest.mark.slow
def test_odds_derivatives_match_finite_differences() -> None:
    dgp = LogisticDGP(intercept=0.0, treatment_slopes=(1.5, 0.5), outcome_slopes=(1.0, 0.5))
    model = _odds_model(n=40_000, seed=5, dgp=dgp)
    measured = model.measure()
    gamma = 1.0
    curve = model.bounds([gamma])
    basis = np.asarray(measured.scale_basis)
    step = 0.01 * measured.value
    upper = (model.sensitivity_upper(gamma * (basis + step)) - model.sensitivity_upper(gamma * (basis - step))) / (2 * step)
    lower = (model.sensitivity_lower(gamma * (basis + step)) - model.sensitivity_lower(gamma * (basis - step))) / (2 * step)
    assert upper > 0
    assert lower < 0
    assert curve.upper_derivative[0] == pytest.approx(upper, rel=0.05)
    assert curve.lower_derivative[0] == pytest.approx(lower, rel=0.05)
