from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from app.core.errors import DataValidationError, LogisticFitError

logger = logging.getLogger(__name__)

MAX_NEWTON_STEPS = 100
GRADIENT_TOLERANCE = 1e-8
# |x'beta| beyond this means fitted probabilities of 0 or 1: separated data
SEPARATION_LINEAR_PREDICTOR = 30.0

IDENTIFIABILITY_HINT = (
    "the covariate distribution must not be concentrated on a (d-1)-dimensional affine subspace"
)


def with_intercept(covariates: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(covariates.shape[0]), covariates])


def mean_log_likelihood(design: np.ndarray, treatment: np.ndarray, beta: np.ndarray) -> float:
    eta = design @ beta
    return float(np.mean(treatment * log_expit(eta) + (1.0 - treatment) * log_expit(-eta)))


def fisher_information(design: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """E_n[Psi(1 - Psi) x x^T] at beta, with x carrying the intercept."""
    prob = expit(design @ beta)
    weights = prob * (1.0 - prob)
    return (design * weights[:, None]).T @ design / design.shape[0]


def score_values(design: np.ndarray, treatment: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Per-observation score (A - Psi(x'beta)) x, shape n x (d+1)."""
    return (treatment - expit(design @ beta))[:, None] * design


def _check_positive_definite(matrix: np.ndarray) -> None:
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise LogisticFitError(
            f"Logistic Hessian is not positive definite; {IDENTIFIABILITY_HINT}",
            details={"eigenvalues": np.linalg.eigvalsh(matrix).tolist()},
        ) from exc


@dataclass(frozen=True)
class LogisticFit:
    beta: np.ndarray
    fisher_info: np.ndarray
    iterations: int
    converged: bool
    score_norm: float
    n: int

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        return expit(with_intercept(covariates) @ self.beta)


def fit_logistic(covariates: np.ndarray, treatment: np.ndarray) -> LogisticFit:
    """Bernoulli maximum likelihood by damped Newton steps with step halving."""
    design = with_intercept(covariates)
    treatment = np.asarray(treatment, dtype=float)
    n = design.shape[0]

    share = float(np.clip(treatment.mean(), 1e-6, 1 - 1e-6))
    beta = np.zeros(design.shape[1])
    beta[0] = np.log(share / (1 - share))
    loglik = mean_log_likelihood(design, treatment, beta)

    converged = False
    score_norm = np.inf
    iteration = 0
    for iteration in range(1, MAX_NEWTON_STEPS + 1):
        gradient = design.T @ (treatment - expit(design @ beta)) / n
        score_norm = float(np.linalg.norm(gradient))
        if score_norm <= GRADIENT_TOLERANCE:
            converged = True
            break

        hessian = fisher_information(design, beta)
        _check_positive_definite(hessian)
        step = np.linalg.solve(hessian, gradient)

        scale = 1.0
        candidate = beta + step
        candidate_loglik = mean_log_likelihood(design, treatment, candidate)
        while candidate_loglik < loglik and scale > 1e-10:
            scale /= 2
            candidate = beta + scale * step
            candidate_loglik = mean_log_likelihood(design, treatment, candidate)
        beta, loglik = candidate, candidate_loglik

        if np.max(np.abs(design @ beta)) > SEPARATION_LINEAR_PREDICTOR:
            raise LogisticFitError(
                "Logistic fit diverged: treatment looks separable in the covariates; use method='knn'",
                details={"iteration": iteration, "beta": beta.tolist()},
            )

    if not converged:
        raise LogisticFitError(
            "Logistic Newton iterations did not converge; use method='knn'",
            details={"iterations": iteration, "score_norm": score_norm},
        )

    fisher = fisher_information(design, beta)
    _check_positive_definite(fisher)
    logger.debug("Logistic fit converged", extra={"iterations": iteration, "score_norm": score_norm})
    return LogisticFit(
        beta=beta,
        fisher_info=fisher,
        iterations=iteration,
        converged=converged,
        score_norm=score_norm,
        n=n,
    )


@dataclass(frozen=True)
class LogisticProjection:
    """Logistic working model of A on unit-cube covariates; M is its largest slope."""

    fit: LogisticFit

    @property
    def beta(self) -> np.ndarray:
        return self.fit.beta

    @property
    def fisher_info(self) -> np.ndarray:
        return self.fit.fisher_info

    @property
    def converged(self) -> bool:
        return self.fit.converged

    @property
    def slopes(self) -> np.ndarray:
        return self.fit.beta[1:]

    def maximizer(self) -> int:
        """Index of the largest absolute slope; ties go to the smallest index."""
        return int(np.argmax(np.abs(self.slopes)))

    def measured_confounding(self) -> float:
        return float(np.max(np.abs(self.slopes)))

    def runner_up_gap(self) -> float:
        ordered = np.sort(np.abs(self.slopes))[::-1]
        return float(ordered[0] - ordered[1]) if len(ordered) > 1 else float(ordered[0])

    def score(self, covariates: np.ndarray, treatment: np.ndarray) -> np.ndarray:
        return score_values(with_intercept(covariates), np.asarray(treatment, dtype=float), self.fit.beta)

    def coefficient_covariance(self) -> np.ndarray:
        return np.linalg.inv(self.fit.fisher_info) / self.fit.n


def fit_logistic_projection(covariates: np.ndarray, treatment: np.ndarray) -> LogisticProjection:
    if covariates.size and (covariates.min() < -1e-9 or covariates.max() > 1 + 1e-9):
        raise DataValidationError(
            "Odds-ratio projection needs covariates rescaled to the unit cube",
            details={"min": float(covariates.min()), "max": float(covariates.max())},
        )
    return LogisticProjection(fit=fit_logistic(covariates, treatment))
