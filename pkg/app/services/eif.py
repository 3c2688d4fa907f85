"""Uncentered influence-function evaluators.

Every function takes observation arrays plus nuisance predictions already
evaluated at those observations and returns one value per row. Centering and
variance estimation are left to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from app.core.errors import NumericalError
from app.services.logistic import IDENTIFIABILITY_HINT
from app.services.theta import eval_omega

Side = Literal["upper", "lower"]


@dataclass(frozen=True)
class InfluenceValues:
    values: np.ndarray
    target: str
    centered: bool = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def variance(self) -> float:
        return float(np.var(self.values, ddof=1))

    @property
    def standard_error(self) -> float:
        return float(np.sqrt(self.variance / self.n))

    def center(self) -> InfluenceValues:
        if self.centered:
            return self
        return replace(self, values=self.values - self.values.mean(), centered=True)


def _check_propensity(pi: np.ndarray) -> None:
    if np.any(pi <= 0) or np.any(pi >= 1):
        raise NumericalError("Propensity outside (0, 1) reached an influence-function evaluation")


def phi_amd(
    treatment: np.ndarray,
    outcome: np.ndarray,
    pi1: np.ndarray,
    mu1: np.ndarray,
    mu0: np.ndarray,
) -> np.ndarray:
    """mu1 - mu0 + {A/pi1 - (1-A)/pi0}(Y - mu_A), the adjusted mean difference EIF."""
    _check_propensity(pi1)
    mu_observed = np.where(treatment == 1, mu1, mu0)
    weight = treatment / pi1 - (1 - treatment) / (1 - pi1)
    return mu1 - mu0 + weight * (outcome - mu_observed)


def xi(treatment: np.ndarray, pi_arm: np.ndarray, arm: int) -> np.ndarray:
    """EIF of ||pi_a||^2: pi_a^2 + 2 pi_a {1(A=a) - pi_a}."""
    indicator = (treatment == arm).astype(float)
    return pi_arm**2 + 2 * pi_arm * (indicator - pi_arm)


def lambda_values(
    treatment: np.ndarray,
    outcome: np.ndarray,
    arm: int,
    mu_full: np.ndarray,
    mu_sub: np.ndarray,
    pseudo_sub: np.ndarray,
    pi_arm_full: np.ndarray,
    pi_arm_sub: np.ndarray,
) -> np.ndarray:
    """EIF of ||mu_a(X_{-S}) - E{mu_a(X) | A=1-a, X_{-S}}||^2.

    `mu_full` is mu_a(X), `mu_sub` is mu_a(X_{-S}), `pseudo_sub` the
    pseudo-outcome regression; propensities are for arm a on both covariate sets.
    """
    _check_propensity(pi_arm_full)
    _check_propensity(pi_arm_sub)
    in_arm = (treatment == arm).astype(float)
    other = 1.0 - in_arm
    pi_other_full = 1.0 - pi_arm_full
    pi_other_sub = 1.0 - pi_arm_sub

    gap = mu_sub - pseudo_sub
    correction = (
        in_arm / pi_arm_sub * (outcome - mu_sub)
        - in_arm / pi_arm_full * (outcome - mu_full) * pi_other_full / pi_other_sub
        - other / pi_other_sub * (mu_full - pseudo_sub)
    )
    return gap**2 + 2 * gap * correction


@dataclass(frozen=True)
class OddsSideValues:
    """Thresholds and nu evaluated per row for one side of the odds-ratio bound.

    Upper side: treated arm at theta_1^+, control arm at theta_0^-.
    Lower side: treated arm at theta_1^-, control arm at theta_0^+.
    """

    treated_theta: np.ndarray
    treated_nu: np.ndarray
    control_theta: np.ndarray
    control_nu: np.ndarray


def varphi_odds(
    treatment: np.ndarray,
    outcome: np.ndarray,
    pi1: np.ndarray,
    values: OddsSideValues,
    t: float,
    side: Side,
) -> np.ndarray:
    _check_propensity(pi1)
    if np.any(values.treated_nu <= 0) or np.any(values.control_nu <= 0):
        raise NumericalError("nu estimate is not positive", details={"side": side, "t": t})

    treated_tau, control_tau = (1.0 / t, t) if side == "upper" else (t, 1.0 / t)
    pi0 = 1.0 - pi1
    control = 1.0 - treatment

    treated_mean = (
        treatment * outcome
        + control * values.treated_theta
        + treatment * eval_omega(outcome, values.treated_theta, treated_tau) * pi0 / (values.treated_nu * pi1)
    )
    control_mean = (
        control * outcome
        + treatment * values.control_theta
        + control * eval_omega(outcome, values.control_theta, control_tau) * pi1 / (values.control_nu * pi0)
    )
    return treated_mean - control_mean


def phi_M_odds(score: np.ndarray, fisher_info: np.ndarray, beta: np.ndarray, maximizer: int) -> np.ndarray:
    """e_j' I^{-1} sign(beta_j') s(Z; beta) for slope index `maximizer` (intercept excluded)."""
    position = maximizer + 1
    unit = np.zeros(fisher_info.shape[0])
    unit[position] = 1.0
    try:
        row = np.linalg.solve(fisher_info, unit)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Fisher information is singular; {IDENTIFIABILITY_HINT}") from exc
    return np.sign(beta[position]) * (score @ row)
