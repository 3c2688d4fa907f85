from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from app.services.data import Dataset, FoldAssignment
from app.services.eif import phi_amd
from app.services.nuisance import (
    NuisanceOptions,
    OutcomeRule,
    PropensityRule,
    PseudoOutcomeRule,
    fit_outcome,
    fit_propensity,
    fit_pseudo_outcome_regression,
)
from app.worker.pool import parallel_map

logger = logging.getLogger(__name__)

Columns = tuple[int, ...]


class NuisanceFactory(Protocol):
    """Builds nuisance rules from a training split for an adjustment set.

    `covariates` always holds every visible column; `kept` selects the
    adjustment set and the returned rules predict from `covariates[:, kept]`.
    """

    def propensity(self, covariates: np.ndarray, treatment: np.ndarray, kept: Columns) -> PropensityRule: ...

    def outcome(
        self, covariates: np.ndarray, treatment: np.ndarray, outcome: np.ndarray, kept: Columns, arm: int
    ) -> OutcomeRule: ...

    def pseudo_outcome(
        self, covariates: np.ndarray, treatment: np.ndarray, arm: int, kept: Columns, outcome_rule: OutcomeRule
    ) -> PseudoOutcomeRule: ...


@dataclass(frozen=True)
class LearnedNuisances:
    options: NuisanceOptions = field(default_factory=NuisanceOptions)

    def propensity(self, covariates: np.ndarray, treatment: np.ndarray, kept: Columns) -> PropensityRule:
        return fit_propensity(
            covariates[:, list(kept)],
            treatment,
            method=self.options.propensity,
            epsilon=self.options.epsilon,
            neighbors=self.options.neighbors,
        )

    def outcome(
        self, covariates: np.ndarray, treatment: np.ndarray, outcome: np.ndarray, kept: Columns, arm: int
    ) -> OutcomeRule:
        return fit_outcome(covariates[:, list(kept)], treatment, outcome, arm, method=self.options.outcome, options=self.options)

    def pseudo_outcome(
        self, covariates: np.ndarray, treatment: np.ndarray, arm: int, kept: Columns, outcome_rule: OutcomeRule
    ) -> PseudoOutcomeRule:
        return fit_pseudo_outcome_regression(
            covariates, treatment, arm, kept, outcome_rule, method=self.options.smoother, options=self.options
        )


@dataclass(frozen=True)
class FoldRules:
    propensity: PropensityRule
    control: OutcomeRule
    treated: OutcomeRule

    def outcome(self, arm: int) -> OutcomeRule:
        return self.treated if arm == 1 else self.control


@dataclass(frozen=True)
class AmdFit:
    """Out-of-fold nuisance predictions and EIF values for one adjustment set."""

    kept: Columns
    pi1: np.ndarray
    mu1: np.ndarray
    mu0: np.ndarray
    phi: np.ndarray

    @property
    def estimate(self) -> float:
        return float(np.mean(self.phi))

    def pi_arm(self, arm: int) -> np.ndarray:
        return self.pi1 if arm == 1 else 1.0 - self.pi1

    def mu(self, arm: int) -> np.ndarray:
        return self.mu1 if arm == 1 else self.mu0


class CrossFitter:
    """Fits nuisances on K-1 folds and evaluates them on the held-out fold.

    Pooling out-of-fold values over all rows gives the fold-swap average of the
    estimation-split means. Results are cached per adjustment set.
    """

    def __init__(
        self,
        dataset: Dataset,
        folds: FoldAssignment,
        factory: NuisanceFactory | None = None,
        threads: int = 1,
    ) -> None:
        self.dataset = dataset
        self.folds = folds
        self.factory = factory or LearnedNuisances()
        self.threads = threads
        self.covariates = dataset.covariates
        self.treatment = dataset.treatment
        self.outcome = dataset.outcome
        self._rules: dict[Columns, list[FoldRules]] = {}
        self._amd: dict[Columns, AmdFit] = {}
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def full(self) -> Columns:
        return tuple(range(self.dataset.d))

    def columns_without(self, excluded: frozenset[int]) -> Columns:
        """Visible-column positions left after dropping absolute indices in `excluded`."""
        return tuple(pos for pos, column in enumerate(self.dataset.kept) if column not in excluded)

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        return self.folds.train_index(fold), self.folds.test_index(fold)

    def _fit_rules(self, kept: Columns) -> list[FoldRules]:
        rules = []
        for fold in range(self.folds.K):
            train, _ = self.split(fold)
            x, a, y = self.covariates[train], self.treatment[train], self.outcome[train]
            rules.append(
                FoldRules(
                    propensity=self.factory.propensity(x, a, kept),
                    control=self.factory.outcome(x, a, y, kept, 0),
                    treated=self.factory.outcome(x, a, y, kept, 1),
                )
            )
        logger.debug("Fitted fold nuisances", extra={"kept": kept, "folds": self.folds.K})
        return rules

    def rules(self, kept: Columns) -> list[FoldRules]:
        with self._lock:
            cached = self._rules.get(kept)
        if cached is None:
            cached = self._fit_rules(kept)
            with self._lock:
                self._rules.setdefault(kept, cached)
        return cached

    def out_of_fold(self, kept: Columns, evaluate) -> np.ndarray:
        """Assemble `evaluate(fold, rules, test_rows, x_kept)` over folds into one array."""
        values = np.empty(self.n)
        for fold, fold_rules in enumerate(self.rules(kept)):
            _, test = self.split(fold)
            values[test] = evaluate(fold, fold_rules, test, self.covariates[test][:, list(kept)])
        return values

    def amd(self, kept: Columns) -> AmdFit:
        with self._lock:
            cached = self._amd.get(kept)
        if cached is not None:
            return cached

        pi1 = self.out_of_fold(kept, lambda fold, rules, rows, x: rules.propensity.predict(x))
        mu1 = self.out_of_fold(kept, lambda fold, rules, rows, x: rules.treated.predict(x))
        mu0 = self.out_of_fold(kept, lambda fold, rules, rows, x: rules.control.predict(x))
        fit = AmdFit(kept=kept, pi1=pi1, mu1=mu1, mu0=mu0, phi=phi_amd(self.treatment, self.outcome, pi1, mu1, mu0))
        with self._lock:
            self._amd.setdefault(kept, fit)
        return fit

    def prefit(self, kept_sets: list[Columns]) -> list[AmdFit]:
        """Fit several adjustment sets, concurrently when threads > 1."""
        return parallel_map(self.amd, kept_sets, threads=self.threads)

    def pseudo_outcome_values(self, kept: Columns, arm: int) -> np.ndarray:
        """Out-of-fold E{mu_a(X) | A=1-a, X_kept} with mu_a fitted on all visible columns."""
        full_rules = self.rules(self.full)

        def evaluate(fold: int, rules: FoldRules, rows: np.ndarray, x: np.ndarray) -> np.ndarray:
            train, _ = self.split(fold)
            rule = self.factory.pseudo_outcome(
                self.covariates[train], self.treatment[train], arm, kept, full_rules[fold].outcome(arm)
            )
            return rule.predict(x)

        return self.out_of_fold(kept, evaluate)
