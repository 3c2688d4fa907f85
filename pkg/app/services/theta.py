"""Quantile-type thresholds for the odds-ratio model.

theta^-(x; t) solves E{omega_theta(Y; t) | a, x} = 0 and theta^+(x; t) solves the
same condition with 1/t. Both minimize the asymmetric squared loss
0.5 * [(y - theta)_+^2 + t * (theta - y)_+^2] over a linear sieve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from app.core.errors import ConfigurationError, ThetaSolverError

logger = logging.getLogger(__name__)

Sign = Literal["-", "+"]

SOLVER_TOLERANCE = 1e-10
MAX_ITERATIONS = 200
PATIENCE = 10
MOMENT_BINS = 5


def eval_omega(y: np.ndarray | float, theta: np.ndarray | float, t: float) -> np.ndarray | float:
    """(y - theta) above theta, t * (y - theta) below."""
    residual = np.asarray(y, dtype=float) - np.asarray(theta, dtype=float)
    value = np.where(residual > 0, residual, t * residual)
    return float(value) if value.ndim == 0 else value


def sieve_basis(covariates: np.ndarray, kind: str = "linear") -> np.ndarray:
    columns = [np.ones(covariates.shape[0]), *covariates.T]
    if kind == "quadratic":
        columns.extend((covariates**2).T)
    elif kind != "linear":
        raise ConfigurationError(f"Unknown theta basis: {kind}", details={"available": ["linear", "quadratic"]})
    return np.column_stack(columns)


def effective_multiplier(t: float, sign: Sign) -> float:
    return t if sign == "-" else 1.0 / t


def _loss(basis: np.ndarray, y: np.ndarray, coef: np.ndarray, tau: float) -> float:
    residual = y - basis @ coef
    return float(0.5 * np.mean(np.where(residual > 0, residual**2, tau * residual**2)))


def _least_squares(basis: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(basis, target, rcond=None)[0]


@dataclass(frozen=True)
class ThetaRule:
    sign: Sign
    arm: int
    t: float
    basis_kind: str
    coef: np.ndarray
    y_low: float
    y_high: float
    below_coef: np.ndarray
    shortfall_coef: np.ndarray
    excess_coef: np.ndarray
    iterations: int
    moment_residual: float
    bin_residuals: tuple[float, ...]

    @property
    def multiplier(self) -> float:
        return effective_multiplier(self.t, self.sign)

    def _basis(self, covariates: np.ndarray) -> np.ndarray:
        return sieve_basis(covariates, self.basis_kind)

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return np.clip(self._basis(covariates) @ self.coef, self.y_low, self.y_high)

    def below_probability(self, covariates: np.ndarray) -> np.ndarray:
        """P(Y < theta(x) | A = a, x)."""
        return np.clip(self._basis(covariates) @ self.below_coef, 0.0, 1.0)

    def exceedance_probability(self, covariates: np.ndarray) -> np.ndarray:
        return 1.0 - self.below_probability(covariates)

    def nu(self, covariates: np.ndarray) -> np.ndarray:
        """nu^- = P(Y >= theta) + t P(Y < theta); nu^+ uses 1/t."""
        below = self.below_probability(covariates)
        return (1.0 - below) + self.multiplier * below

    def shortfall(self, covariates: np.ndarray) -> np.ndarray:
        """f_a(x; theta) = E{(theta - Y)_+ | a, x}."""
        return np.maximum(self._basis(covariates) @ self.shortfall_coef, 0.0)

    def excess(self, covariates: np.ndarray) -> np.ndarray:
        """f~_a(x; theta) = E{(Y - theta)_+ | a, x}."""
        return np.maximum(self._basis(covariates) @ self.excess_coef, 0.0)


def _bin_residuals(fitted: np.ndarray, omega: np.ndarray) -> tuple[float, ...]:
    if len(np.unique(fitted)) < MOMENT_BINS:
        return (float(omega.mean()),)
    edges = np.quantile(fitted, np.linspace(0, 1, MOMENT_BINS + 1)[1:-1])
    labels = np.searchsorted(edges, fitted, side="right")
    return tuple(float(omega[labels == label].mean()) for label in range(MOMENT_BINS) if np.any(labels == label))


def fit_theta(
    covariates: np.ndarray,
    outcome: np.ndarray,
    t: float,
    sign: Sign,
    arm: int = 1,
    basis: str = "linear",
    tolerance: float = SOLVER_TOLERANCE,
    max_iterations: int = MAX_ITERATIONS,
    patience: int = PATIENCE,
) -> ThetaRule:
    """Fit theta_a^{sign}(x; t) on the rows of one treatment arm.

    Descent on the convex loss, each step scaled by the generalized Hessian of
    the active residual weights and halved until the loss does not increase.
    """
    if t <= 0:
        raise ConfigurationError("Odds multiplier t must be positive", details={"t": t})
    y = np.asarray(outcome, dtype=float)
    design = sieve_basis(covariates, basis)
    n = design.shape[0]
    tau = effective_multiplier(t, sign)
    scale = max(1.0, float(np.std(y)))

    coef = _least_squares(design, y)
    loss = _loss(design, y, coef, tau)
    trace = [loss]
    stalled = 0
    converged = False
    iteration = 0

    for iteration in range(1, max_iterations + 1):
        residual = y - design @ coef
        weights = np.where(residual > 0, 1.0, tau)
        gradient = -design.T @ (weights * residual) / n
        if np.max(np.abs(gradient)) <= tolerance * scale:
            converged = True
            break

        hessian = (design * weights[:, None]).T @ design / n
        try:
            step = np.linalg.solve(hessian, -gradient)
        except np.linalg.LinAlgError:
            step = _least_squares(hessian, -gradient)

        size = 1.0
        candidate = coef + step
        candidate_loss = _loss(design, y, candidate, tau)
        while candidate_loss > loss and size > 1e-12:
            size /= 2
            candidate = coef + size * step
            candidate_loss = _loss(design, y, candidate, tau)

        if candidate_loss >= loss:
            stalled += 1
            if stalled > patience:
                raise ThetaSolverError(
                    "Theta solver stopped decreasing the loss",
                    details={"sign": sign, "arm": arm, "t": t, "trace": trace[-20:]},
                )
        else:
            stalled = 0
        coef, loss = candidate, candidate_loss
        trace.append(loss)

    if not converged:
        raise ThetaSolverError(
            "Theta solver did not reach the gradient tolerance",
            details={"sign": sign, "arm": arm, "t": t, "iterations": iteration, "trace": trace[-20:]},
        )

    y_low, y_high = float(y.min()), float(y.max())
    fitted = np.clip(design @ coef, y_low, y_high)
    omega = eval_omega(y, fitted, tau)
    residual_mean = float(np.mean(omega))
    if abs(residual_mean) > 1e-4 * scale:
        logger.warning(
            "Theta moment residual above tolerance",
            extra={"sign": sign, "arm": arm, "t": t, "residual": residual_mean},
        )

    below = (y < fitted).astype(float)
    return ThetaRule(
        sign=sign,
        arm=arm,
        t=float(t),
        basis_kind=basis,
        coef=coef,
        y_low=y_low,
        y_high=y_high,
        below_coef=_least_squares(design, below),
        shortfall_coef=_least_squares(design, np.maximum(fitted - y, 0.0)),
        excess_coef=_least_squares(design, np.maximum(y - fitted, 0.0)),
        iterations=iteration,
        moment_residual=residual_mean,
        bin_residuals=_bin_residuals(fitted, omega),
    )


def moment_root(outcome: np.ndarray, t: float, sign: Sign = "-") -> float:
    """Pointwise theta for a sample from one conditional law, by bracketing the moment."""
    y = np.asarray(outcome, dtype=float)
    tau = effective_multiplier(t, sign)
    low, high = float(y.min()), float(y.max())
    if low == high:
        return low
    return float(brentq(lambda theta: float(np.mean(eval_omega(y, theta, tau))), low, high, xtol=1e-12))


@dataclass(frozen=True)
class RuleValues:
    theta: np.ndarray
    nu: np.ndarray
    shortfall: np.ndarray
    excess: np.ndarray


def _values(rule: ThetaRule, covariates: np.ndarray) -> RuleValues:
    return RuleValues(
        theta=rule.predict(covariates),
        nu=rule.nu(covariates),
        shortfall=rule.shortfall(covariates),
        excess=rule.excess(covariates),
    )


@dataclass(frozen=True)
class BundleValues:
    treated_plus: RuleValues
    treated_minus: RuleValues
    control_plus: RuleValues
    control_minus: RuleValues


@dataclass(frozen=True)
class ThetaBundle:
    """theta_a^{+/-} for both arms at one multiplier t, fitted on one training split."""

    t: float
    treated_plus: ThetaRule
    treated_minus: ThetaRule
    control_plus: ThetaRule
    control_minus: ThetaRule

    def evaluate(self, covariates: np.ndarray) -> BundleValues:
        return BundleValues(
            treated_plus=_values(self.treated_plus, covariates),
            treated_minus=_values(self.treated_minus, covariates),
            control_plus=_values(self.control_plus, covariates),
            control_minus=_values(self.control_minus, covariates),
        )


def fit_theta_bundle(
    covariates: np.ndarray,
    treatment: np.ndarray,
    outcome: np.ndarray,
    t: float,
    basis: str = "linear",
) -> ThetaBundle:
    rules = {}
    for arm, prefix in ((1, "treated"), (0, "control")):
        rows = np.asarray(treatment) == arm
        for sign, suffix in (("+", "plus"), ("-", "minus")):
            rules[f"{prefix}_{suffix}"] = fit_theta(covariates[rows], outcome[rows], t, sign, arm=arm, basis=basis)
    return ThetaBundle(t=float(t), **rules)
