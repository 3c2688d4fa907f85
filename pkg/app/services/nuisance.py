from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.linear_model import LinearRegression
from sklearn.neighbors import KNeighborsRegressor

from app.core.errors import ConfigurationError, FitError
from app.services.logistic import LogisticFit, fit_logistic
from app.utils.chunking import row_blocks

logger = logging.getLogger(__name__)


class Regressor(Protocol):
    def predict(self, covariates: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class NuisanceOptions:
    propensity: str = "logistic"
    outcome: str = "linear"
    smoother: str = "linear"
    epsilon: float = 0.01
    neighbors: int | None = None
    theta_basis: str = "linear"

    @classmethod
    def from_section(cls, section: Any) -> NuisanceOptions:
        return cls(
            propensity=section.propensity,
            outcome=section.outcome,
            smoother=section.smoother,
            epsilon=section.epsilon,
            neighbors=section.neighbors,
            theta_basis=section.theta_basis,
        )


@dataclass(frozen=True)
class ConstantRegressor:
    value: float

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return np.full(covariates.shape[0], self.value)


@dataclass(frozen=True)
class CallableRegressor:
    """Wraps a known function of the covariates (analytic nuisances)."""

    function: Callable[[np.ndarray], np.ndarray]

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return np.asarray(self.function(covariates), dtype=float)


@dataclass(frozen=True)
class SklearnRegressor:
    estimator: Any

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return np.asarray(self.estimator.predict(covariates), dtype=float)


@dataclass(frozen=True)
class LogisticRegressor:
    fit: LogisticFit

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return self.fit.predict(covariates)


@dataclass(frozen=True)
class NadarayaWatson:
    train_x: np.ndarray
    train_y: np.ndarray
    scale: np.ndarray
    bandwidth: float

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        out = np.empty(covariates.shape[0])
        reference = self.train_x / self.scale
        for block in row_blocks(covariates.shape[0], 2048):
            weights = _gaussian_weights(covariates[block] / self.scale, reference, self.bandwidth)
            out[block] = _weighted_mean(weights, self.train_y)
        return out


def _gaussian_weights(points: np.ndarray, reference: np.ndarray, bandwidth: float) -> np.ndarray:
    distances = cdist(points, reference, metric="sqeuclidean")
    # shift by the row minimum so far-away points do not underflow to all zeros
    distances -= distances.min(axis=1, keepdims=True)
    return np.exp(-distances / (2 * bandwidth**2))


def _weighted_mean(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    return weights @ values / weights.sum(axis=1)


def default_neighbors(n: int) -> int:
    return max(1, math.ceil(math.sqrt(n)))


def fit_linear(covariates: np.ndarray, target: np.ndarray, options: NuisanceOptions) -> Regressor:
    return SklearnRegressor(LinearRegression().fit(covariates, target))


def fit_knn(covariates: np.ndarray, target: np.ndarray, options: NuisanceOptions) -> Regressor:
    n = covariates.shape[0]
    k = min(options.neighbors or default_neighbors(n), n)
    return SklearnRegressor(KNeighborsRegressor(n_neighbors=k).fit(covariates, target))


_NW_CV_ROWS = 1500
_NW_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


def fit_nadaraya_watson(covariates: np.ndarray, target: np.ndarray, options: NuisanceOptions) -> Regressor:
    """Gaussian-kernel regression with leave-one-out cross-validated bandwidth."""
    n, d = covariates.shape
    scale = covariates.std(axis=0)
    scale[scale <= 0] = 1.0
    standardized = covariates / scale

    # LOO criterion on a deterministic subsample keeps the kernel matrix small
    rows = np.arange(n) if n <= _NW_CV_ROWS else np.linspace(0, n - 1, _NW_CV_ROWS).astype(int)
    sub_x, sub_y = standardized[rows], target[rows]
    reference = n ** (-1.0 / (d + 4))

    best_bandwidth, best_error = reference, np.inf
    for multiplier in _NW_MULTIPLIERS:
        bandwidth = reference * multiplier
        weights = _gaussian_weights(sub_x, sub_x, bandwidth)
        np.fill_diagonal(weights, 0.0)
        totals = weights.sum(axis=1)
        usable = totals > 0
        if not usable.any():
            continue
        loo = weights[usable] @ sub_y / totals[usable]
        error = float(np.mean((sub_y[usable] - loo) ** 2))
        if error < best_error:
            best_bandwidth, best_error = bandwidth, error

    logger.debug("Nadaraya-Watson bandwidth selected", extra={"bandwidth": best_bandwidth, "cv_error": best_error})
    return NadarayaWatson(train_x=covariates.copy(), train_y=np.asarray(target, dtype=float).copy(), scale=scale, bandwidth=best_bandwidth)


SmootherFactory = Callable[[np.ndarray, np.ndarray, NuisanceOptions], Regressor]

_SMOOTHERS: dict[str, SmootherFactory] = {
    "linear": fit_linear,
    "knn": fit_knn,
    "nadaraya-watson": fit_nadaraya_watson,
}


def register_smoother(name: str, factory: SmootherFactory) -> None:
    """Make a custom learner available to outcome and pseudo-outcome fits."""
    _SMOOTHERS[name] = factory


def fit_smoother(covariates: np.ndarray, target: np.ndarray, method: str, options: NuisanceOptions) -> Regressor:
    if method not in _SMOOTHERS:
        raise ConfigurationError(f"Unknown smoother: {method}", details={"available": sorted(_SMOOTHERS)})
    if covariates.shape[1] == 0:
        return ConstantRegressor(float(np.mean(target)))
    return _SMOOTHERS[method](covariates, target, options)


@dataclass(frozen=True)
class PropensityRule:
    model: Regressor
    epsilon: float
    method: str

    def raw(self, covariates: np.ndarray) -> np.ndarray:
        return self.model.predict(covariates)

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        """pi_1(x) truncated to [epsilon, 1 - epsilon]."""
        return np.clip(self.raw(covariates), self.epsilon, 1.0 - self.epsilon)

    def predict_arm(self, covariates: np.ndarray, arm: int) -> np.ndarray:
        treated = self.predict(covariates)
        return treated if arm == 1 else 1.0 - treated


def fit_propensity(
    covariates: np.ndarray,
    treatment: np.ndarray,
    method: str = "logistic",
    epsilon: float = 0.01,
    neighbors: int | None = None,
) -> PropensityRule:
    treatment = np.asarray(treatment, dtype=float)
    share = treatment.mean()
    if share in (0.0, 1.0):
        raise FitError("Propensity fit needs both treatment arms in the training split")

    if covariates.shape[1] == 0:
        return PropensityRule(model=ConstantRegressor(float(share)), epsilon=epsilon, method="constant")
    if method == "logistic":
        return PropensityRule(model=LogisticRegressor(fit_logistic(covariates, treatment)), epsilon=epsilon, method=method)
    if method == "knn":
        options = NuisanceOptions(neighbors=neighbors)
        return PropensityRule(model=fit_knn(covariates, treatment, options), epsilon=epsilon, method=method)
    raise ConfigurationError(f"Unknown propensity method: {method}", details={"available": ["logistic", "knn"]})


@dataclass(frozen=True)
class OutcomeRule:
    arm: int
    model: Regressor
    method: str

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return self.model.predict(covariates)


def fit_outcome(
    covariates: np.ndarray,
    treatment: np.ndarray,
    outcome: np.ndarray,
    arm: int,
    method: str = "linear",
    options: NuisanceOptions | None = None,
) -> OutcomeRule:
    rows = np.asarray(treatment) == arm
    if not rows.any():
        raise FitError(f"Outcome fit needs observations with A={arm} in the training split", details={"arm": arm})
    model = fit_smoother(covariates[rows], np.asarray(outcome)[rows], method, options or NuisanceOptions())
    return OutcomeRule(arm=arm, model=model, method=method)


@dataclass(frozen=True)
class PseudoOutcomeRule:
    """E{mu_a(X) | A = 1 - a, X_{-S}} as a function of the kept columns."""

    arm: int
    kept: tuple[int, ...]
    model: Regressor

    def predict(self, covariates_kept: np.ndarray) -> np.ndarray:
        return self.model.predict(covariates_kept)


def fit_pseudo_outcome_regression(
    covariates: np.ndarray,
    treatment: np.ndarray,
    arm: int,
    kept: tuple[int, ...],
    outcome_rule: OutcomeRule,
    method: str = "linear",
    options: NuisanceOptions | None = None,
) -> PseudoOutcomeRule:
    rows = np.asarray(treatment) == 1 - arm
    if not rows.any():
        raise FitError(
            f"Pseudo-outcome regression needs observations with A={1 - arm}",
            details={"arm": arm},
        )
    pseudo = outcome_rule.predict(covariates[rows])
    model = fit_smoother(covariates[rows][:, list(kept)], pseudo, method, options or NuisanceOptions())
    return PseudoOutcomeRule(arm=arm, kept=kept, model=model)
