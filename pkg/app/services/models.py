from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from app.core.errors import DegenerateConfoundingError
from app.services.crossfit import Columns, CrossFitter, NuisanceFactory
from app.services.data import Dataset, FoldAssignment, leave_one_group_out
from app.services.eif import OddsSideValues, lambda_values, phi_M_odds, varphi_odds, xi
from app.services.logistic import LogisticProjection, fit_logistic_projection
from app.services.theta import BundleValues, ThetaBundle, fit_theta_bundle
from app.worker.pool import parallel_map

logger = logging.getLogger(__name__)

DEGENERATE_TOLERANCE = 1e-12
DERIVATIVE_FLOOR = 1e-12


@dataclass(frozen=True)
class Component:
    """One leave-out contrast (or one logistic slope) behind measured confounding."""

    label: str
    estimate: float
    signed: float
    standard_error: float
    influence: np.ndarray | None = None
    reference: float | None = None
    arm: int | None = None


@dataclass(frozen=True)
class MeasuredConfounding:
    model: str
    value: float
    maximizer: int
    components: tuple[Component, ...]
    influence: np.ndarray | None
    runner_up_gap: float | None
    scale_basis: float | np.ndarray
    per_arm: dict[int, float] | None = None
    per_fold: tuple[float, ...] | None = None

    @property
    def maximizer_label(self) -> str:
        return self.components[self.maximizer].label

    def scaled(self, gamma: float) -> float | np.ndarray:
        """Sensitivity parameter matching Gamma: Gamma*M, per arm or per fold where needed."""
        return gamma * self.scale_basis


@dataclass(frozen=True)
class BoundCurve:
    model: str
    gamma_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    lower_influence: np.ndarray
    upper_influence: np.ndarray
    posthoc_lower_influence: np.ndarray
    posthoc_upper_influence: np.ndarray
    psi: float
    psi_influence: np.ndarray
    measured: float
    lower_derivative: np.ndarray
    upper_derivative: np.ndarray
    flags: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.psi_influence.shape[0]

    def _se(self, values: np.ndarray) -> np.ndarray:
        return np.sqrt(np.var(values, axis=0, ddof=1) / self.n)

    @property
    def se_lower(self) -> np.ndarray:
        return self._se(self.lower_influence)

    @property
    def se_upper(self) -> np.ndarray:
        return self._se(self.upper_influence)

    @property
    def se_psi(self) -> float:
        return float(np.sqrt(np.var(self.psi_influence, ddof=1) / self.n))

    def ordering_violations(self, tolerance: float = 1e-10) -> list[float]:
        """Grid points where L <= psi <= U or the monotonicity in Gamma fails."""
        slack = tolerance * max(1.0, abs(self.psi))
        bad = set()
        for idx, gamma in enumerate(self.gamma_grid):
            if self.lower[idx] > self.psi + slack or self.upper[idx] < self.psi - slack:
                bad.add(float(gamma))
            if idx and (self.upper[idx] < self.upper[idx - 1] - slack or self.lower[idx] > self.lower[idx - 1] + slack):
                bad.add(float(gamma))
        return sorted(bad)


class CalibratedModel(Protocol):
    name: str
    crossfitter: CrossFitter

    @property
    def psi(self) -> float: ...

    def measure(self) -> MeasuredConfounding: ...

    def bounds(self, gammas: Sequence[float]) -> BoundCurve: ...

    def sensitivity_upper(self, scaled: float | np.ndarray) -> float: ...

    def sensitivity_lower(self, scaled: float | np.ndarray) -> float: ...


def _standard_error(values: np.ndarray) -> float:
    return float(np.sqrt(np.var(values, ddof=1) / values.shape[0]))


def _check_degenerate(model: str, value: float, psi: float, details: dict) -> None:
    if not value > DEGENERATE_TOLERANCE * max(1.0, abs(psi)):
        raise DegenerateConfoundingError(
            "Measured confounding is zero: calibrated bounds need bounded and non-zero measured confounding",
            details={"model": model, "value": value, **details},
        )


def _gap(estimates: list[float]) -> float | None:
    ordered = sorted(estimates, reverse=True)
    return ordered[0] - ordered[1] if len(ordered) > 1 else None


def _resolve_family(dataset: Dataset, family: Sequence[frozenset[int]] | None) -> tuple[frozenset[int], ...]:
    return tuple(family) if family else leave_one_group_out(dataset)


def _family_label(dataset: Dataset, excluded: frozenset[int]) -> str:
    labels = dict.fromkeys(dataset.stored_groups[idx] for idx in sorted(excluded))
    return "+".join(labels)


class EffectDifferencesModel:
    """M = max_j |psi - psi_{-j}| over left-out covariate groups."""

    name = "effect-diff"

    def __init__(
        self,
        dataset: Dataset,
        folds: FoldAssignment,
        factory: NuisanceFactory | None = None,
        family: Sequence[frozenset[int]] | None = None,
        threads: int = 1,
        crossfitter: CrossFitter | None = None,
    ) -> None:
        self.dataset = dataset
        self.crossfitter = crossfitter or CrossFitter(dataset, folds, factory, threads=threads)
        self.family = _resolve_family(dataset, family)
        self._measured: MeasuredConfounding | None = None

    @property
    def psi(self) -> float:
        return self.crossfitter.amd(self.crossfitter.full).estimate

    def measure(self) -> MeasuredConfounding:
        if self._measured is not None:
            return self._measured
        cf = self.crossfitter
        kept_sets = [cf.columns_without(excluded) for excluded in self.family]
        cf.prefit([cf.full, *kept_sets])
        full = cf.amd(cf.full)

        components = []
        for excluded, kept in zip(self.family, kept_sets):
            sub = cf.amd(kept)
            delta = full.phi - sub.phi
            signed = float(np.mean(delta))
            components.append(
                Component(
                    label=_family_label(self.dataset, excluded),
                    estimate=abs(signed),
                    signed=signed,
                    standard_error=_standard_error(delta),
                    influence=delta,
                    reference=sub.estimate,
                )
            )

        estimates = [item.estimate for item in components]
        maximizer = int(np.argmax(estimates))
        value = estimates[maximizer]
        _check_degenerate(self.name, value, full.estimate, {"components": estimates})
        top = components[maximizer]
        measured = MeasuredConfounding(
            model=self.name,
            value=value,
            maximizer=maximizer,
            components=tuple(components),
            influence=np.sign(top.signed) * top.influence,
            runner_up_gap=_gap(estimates),
            scale_basis=value,
        )
        logger.info(
            "Measured confounding estimated",
            extra={"model": self.name, "value": value, "maximizer": top.label, "psi": full.estimate},
        )
        self._measured = measured
        return measured

    def sensitivity_upper(self, scaled: float | np.ndarray) -> float:
        return self.psi + float(scaled)

    def sensitivity_lower(self, scaled: float | np.ndarray) -> float:
        return self.psi - float(scaled)

    def bounds(self, gammas: Sequence[float]) -> BoundCurve:
        measured = self.measure()
        phi = self.crossfitter.amd(self.crossfitter.full).phi
        signed_delta = measured.influence
        grid = np.asarray(gammas, dtype=float)

        upper = np.array([self.sensitivity_upper(measured.scaled(gamma)) for gamma in grid])
        lower = np.array([self.sensitivity_lower(measured.scaled(gamma)) for gamma in grid])
        upper_if = phi[:, None] + grid[None, :] * signed_delta[:, None]
        lower_if = phi[:, None] - grid[None, :] * signed_delta[:, None]
        posthoc = np.repeat(phi[:, None], len(grid), axis=1)
        return BoundCurve(
            model=self.name,
            gamma_grid=grid,
            lower=lower,
            upper=upper,
            lower_influence=lower_if,
            upper_influence=upper_if,
            posthoc_lower_influence=posthoc,
            posthoc_upper_influence=posthoc.copy(),
            psi=self.psi,
            psi_influence=phi,
            measured=measured.value,
            lower_derivative=-grid.copy(),
            upper_derivative=grid.copy(),
        )


class OutcomeModel:
    """Average leave-some-out confounding in the outcome regression, per treatment arm."""

    name = "outcome"

    def __init__(
        self,
        dataset: Dataset,
        folds: FoldAssignment,
        factory: NuisanceFactory | None = None,
        family: Sequence[frozenset[int]] | None = None,
        threads: int = 1,
        crossfitter: CrossFitter | None = None,
    ) -> None:
        self.dataset = dataset
        self.crossfitter = crossfitter or CrossFitter(dataset, folds, factory, threads=threads)
        self.family = _resolve_family(dataset, family)
        if not self.family:
            raise DegenerateConfoundingError("Outcome model needs a non-empty subset family")
        self.threads = threads
        self._measured: MeasuredConfounding | None = None
        self._propensity_norm: dict[int, float] = {}
        self._xi: dict[int, np.ndarray] = {}
        self._lambda_mean: dict[int, np.ndarray] = {}

    @property
    def psi(self) -> float:
        return self.crossfitter.amd(self.crossfitter.full).estimate

    def _clamped(self, value: float, what: str, **context: object) -> float:
        if value < 0:
            logger.warning("Negative plug-in norm clamped to zero", extra={"quantity": what, "value": value, **context})
            return 0.0
        return value

    def measure(self) -> MeasuredConfounding:
        if self._measured is not None:
            return self._measured
        cf = self.crossfitter
        kept_sets = [cf.columns_without(excluded) for excluded in self.family]
        cf.prefit([cf.full, *kept_sets])
        full = cf.amd(cf.full)
        treatment, outcome = cf.treatment, cf.outcome

        for arm in (0, 1):
            other = 1 - arm
            values = xi(treatment, full.pi_arm(other), other)
            self._xi[other] = values
            self._propensity_norm[other] = math.sqrt(self._clamped(float(values.mean()), "xi", arm=other))

        def arm_terms(item: tuple[int, frozenset[int], Columns]) -> tuple[int, frozenset[int], np.ndarray]:
            arm, excluded, kept = item
            sub = cf.amd(kept)
            pseudo = cf.pseudo_outcome_values(kept, arm)
            values = lambda_values(
                treatment,
                outcome,
                arm,
                mu_full=full.mu(arm),
                mu_sub=sub.mu(arm),
                pseudo_sub=pseudo,
                pi_arm_full=full.pi_arm(arm),
                pi_arm_sub=sub.pi_arm(arm),
            )
            return arm, excluded, values

        jobs = [(arm, excluded, kept) for arm in (0, 1) for excluded, kept in zip(self.family, kept_sets)]
        results = parallel_map(arm_terms, jobs, threads=self.threads)

        components = []
        per_arm: dict[int, float] = {}
        for arm in (0, 1):
            arm_values = [values for item_arm, _, values in results if item_arm == arm]
            norms = []
            for (item_arm, excluded, values) in results:
                if item_arm != arm:
                    continue
                norm_sq = self._clamped(float(values.mean()), "lambda", arm=arm, subset=sorted(excluded))
                norms.append(norm_sq)
                components.append(
                    Component(
                        label=f"{_family_label(self.dataset, excluded)} (A={arm})",
                        estimate=math.sqrt(norm_sq),
                        signed=math.sqrt(norm_sq),
                        standard_error=_standard_error(values) / (2 * math.sqrt(norm_sq)) if norm_sq > 0 else float("nan"),
                        influence=values,
                        arm=arm,
                    )
                )
            self._lambda_mean[arm] = np.mean(arm_values, axis=0)
            per_arm[arm] = math.sqrt(float(np.mean(norms)))

        for arm in (0, 1):
            _check_degenerate(self.name, per_arm[arm], full.estimate, {"arm": arm})

        value = sum(self._propensity_norm[1 - arm] * per_arm[arm] for arm in (0, 1))
        influence = sum(
            self._propensity_norm[1 - arm] * self._lambda_mean[arm] / (2 * per_arm[arm]) for arm in (0, 1)
        )
        estimates = [item.estimate for item in components]
        maximizer = int(np.argmax(estimates))
        measured = MeasuredConfounding(
            model=self.name,
            value=value,
            maximizer=maximizer,
            components=tuple(components),
            influence=influence,
            runner_up_gap=_gap(estimates),
            scale_basis=np.array([per_arm[0], per_arm[1]]),
            per_arm=per_arm,
        )
        logger.info(
            "Measured confounding estimated",
            extra={"model": self.name, "value": value, "m_control": per_arm[0], "m_treated": per_arm[1]},
        )
        self._measured = measured
        return measured

    def sensitivity_upper(self, scaled: float | np.ndarray) -> float:
        gammas = np.broadcast_to(np.asarray(scaled, dtype=float), (2,))
        return self.psi + sum(self._propensity_norm[1 - arm] * gammas[arm] for arm in (0, 1))

    def sensitivity_lower(self, scaled: float | np.ndarray) -> float:
        gammas = np.broadcast_to(np.asarray(scaled, dtype=float), (2,))
        return self.psi - sum(self._propensity_norm[1 - arm] * gammas[arm] for arm in (0, 1))

    def bounds(self, gammas: Sequence[float]) -> BoundCurve:
        measured = self.measure()
        per_arm = measured.per_arm or {}
        phi = self.crossfitter.amd(self.crossfitter.full).phi
        grid = np.asarray(gammas, dtype=float)

        # Gamma-free parts of the influence expression
        calibrated = sum(
            self._propensity_norm[1 - arm] * self._lambda_mean[arm] / (2 * per_arm[arm])
            + per_arm[arm] * self._xi[1 - arm] / (2 * self._propensity_norm[1 - arm])
            for arm in (0, 1)
        )
        posthoc = sum(per_arm[arm] * self._xi[1 - arm] / (2 * self._propensity_norm[1 - arm]) for arm in (0, 1))

        upper = np.array([self.sensitivity_upper(measured.scaled(gamma)) for gamma in grid])
        lower = np.array([self.sensitivity_lower(measured.scaled(gamma)) for gamma in grid])
        return BoundCurve(
            model=self.name,
            gamma_grid=grid,
            lower=lower,
            upper=upper,
            lower_influence=phi[:, None] - grid[None, :] * calibrated[:, None],
            upper_influence=phi[:, None] + grid[None, :] * calibrated[:, None],
            posthoc_lower_influence=phi[:, None] - grid[None, :] * posthoc[:, None],
            posthoc_upper_influence=phi[:, None] + grid[None, :] * posthoc[:, None],
            psi=self.psi,
            psi_influence=phi,
            measured=measured.value,
            lower_derivative=-grid.copy(),
            upper_derivative=grid.copy(),
        )


@dataclass(frozen=True)
class OddsEvaluation:
    """Out-of-fold odds-ratio quantities at one Gamma."""

    upper_values: np.ndarray
    lower_values: np.ndarray
    upper_derivative: float
    lower_derivative: float


def derivative_dU_dM(
    gamma: float,
    t: float | np.ndarray,
    pi1: np.ndarray,
    values: BundleValues,
    side: str = "upper",
) -> np.ndarray:
    """Per-row terms whose sample mean is the plug-in derivative of the bound in M.

    Upper: Gamma pi0 f~_1(theta_1^+)/nu_1^+ + Gamma t pi1 f_0(theta_0^-)/nu_0^-.
    Lower: -Gamma t pi0 f_1(theta_1^-)/nu_1^- - Gamma pi1 f~_0(theta_0^+)/nu_0^+.
    """
    pi0 = 1.0 - pi1
    if side == "upper":
        return gamma * (
            pi0 * values.treated_plus.excess / values.treated_plus.nu
            + t * pi1 * values.control_minus.shortfall / values.control_minus.nu
        )
    return -gamma * (
        t * pi0 * values.treated_minus.shortfall / values.treated_minus.nu
        + pi1 * values.control_plus.excess / values.control_plus.nu
    )


class OddsRatioModel:
    """Calibrated marginal sensitivity model: log-odds bound Gamma*M with M the largest logistic slope."""

    name = "odds"

    def __init__(
        self,
        dataset: Dataset,
        folds: FoldAssignment,
        factory: NuisanceFactory | None = None,
        basis: str = "linear",
        threads: int = 1,
        crossfitter: CrossFitter | None = None,
    ) -> None:
        covariates = dataset.covariates
        if covariates.min() < -1e-9 or covariates.max() > 1 + 1e-9:
            logger.warning("Odds-ratio model expects covariates rescaled to the unit cube")
        self.dataset = dataset
        self.crossfitter = crossfitter or CrossFitter(dataset, folds, factory, threads=threads)
        self.basis = basis
        self.threads = threads
        self._projections: list[LogisticProjection] | None = None
        self._measured: MeasuredConfounding | None = None
        self._bundles: dict[tuple[int, float], ThetaBundle] = {}
        self._lock = threading.Lock()

    @property
    def folds(self) -> FoldAssignment:
        return self.crossfitter.folds

    @property
    def psi(self) -> float:
        return self.crossfitter.amd(self.crossfitter.full).estimate

    def projections(self) -> list[LogisticProjection]:
        if self._projections is None:
            cf = self.crossfitter
            self._projections = [
                fit_logistic_projection(cf.covariates[cf.split(fold)[0]], cf.treatment[cf.split(fold)[0]])
                for fold in range(self.folds.K)
            ]
        return self._projections

    def full_projection(self) -> LogisticProjection:
        return fit_logistic_projection(self.crossfitter.covariates, self.crossfitter.treatment)

    def measure(self) -> MeasuredConfounding:
        if self._measured is not None:
            return self._measured
        cf = self.crossfitter
        projections = self.projections()
        per_fold = [proj.measured_confounding() for proj in projections]
        weights = np.array(self.folds.sizes(), dtype=float) / cf.n
        value = float(np.dot(weights, per_fold))
        _check_degenerate(self.name, value, self.psi, {"per_fold": per_fold})

        choices = [proj.maximizer() for proj in projections]
        counts = np.bincount(choices, minlength=self.dataset.d)
        maximizer = int(np.argmax(counts))

        influence = np.empty(cf.n)
        for fold, proj in enumerate(projections):
            _, test = cf.split(fold)
            score = proj.score(cf.covariates[test], cf.treatment[test])
            influence[test] = phi_M_odds(score, proj.fisher_info, proj.beta, proj.maximizer())

        full = self.full_projection()
        covariance = full.coefficient_covariance()
        components = tuple(
            Component(
                label=self.dataset.names[idx],
                estimate=float(abs(full.slopes[idx])),
                signed=float(full.slopes[idx]),
                standard_error=float(np.sqrt(covariance[idx + 1, idx + 1])),
            )
            for idx in range(self.dataset.d)
        )
        if len(set(choices)) > 1:
            logger.warning("Largest logistic slope differs across folds", extra={"choices": choices})
        measured = MeasuredConfounding(
            model=self.name,
            value=value,
            maximizer=maximizer,
            components=components,
            influence=influence,
            runner_up_gap=float(np.mean([proj.runner_up_gap() for proj in projections])),
            scale_basis=np.array(per_fold),
            per_fold=tuple(per_fold),
        )
        logger.info(
            "Measured confounding estimated",
            extra={"model": self.name, "value": value, "maximizer": measured.maximizer_label},
        )
        self._measured = measured
        return measured

    def bundle(self, fold: int, t: float) -> ThetaBundle:
        key = (fold, float(t))
        with self._lock:
            cached = self._bundles.get(key)
        if cached is None:
            cf = self.crossfitter
            train, _ = cf.split(fold)
            cached = fit_theta_bundle(cf.covariates[train], cf.treatment[train], cf.outcome[train], t, basis=self.basis)
            with self._lock:
                self._bundles.setdefault(key, cached)
        return cached

    def evaluate(self, scaled: float | np.ndarray, gamma: float = 0.0) -> OddsEvaluation:
        """Bound EIF values with per-fold log-odds multipliers `scaled` (Gamma*M_k)."""
        cf = self.crossfitter
        per_fold = np.broadcast_to(np.asarray(scaled, dtype=float), (self.folds.K,))
        full_rules = cf.rules(cf.full)
        upper = np.empty(cf.n)
        lower = np.empty(cf.n)
        d_upper = np.empty(cf.n)
        d_lower = np.empty(cf.n)
        for fold in range(self.folds.K):
            _, test = cf.split(fold)
            x = cf.covariates[test]
            t = math.exp(per_fold[fold])
            values = self.bundle(fold, t).evaluate(x)
            pi1 = full_rules[fold].propensity.predict(x)
            a, y = cf.treatment[test], cf.outcome[test]
            upper[test] = varphi_odds(
                a,
                y,
                pi1,
                OddsSideValues(
                    treated_theta=values.treated_plus.theta,
                    treated_nu=values.treated_plus.nu,
                    control_theta=values.control_minus.theta,
                    control_nu=values.control_minus.nu,
                ),
                t,
                "upper",
            )
            lower[test] = varphi_odds(
                a,
                y,
                pi1,
                OddsSideValues(
                    treated_theta=values.treated_minus.theta,
                    treated_nu=values.treated_minus.nu,
                    control_theta=values.control_plus.theta,
                    control_nu=values.control_plus.nu,
                ),
                t,
                "lower",
            )
            d_upper[test] = derivative_dU_dM(gamma, t, pi1, values, "upper")
            d_lower[test] = derivative_dU_dM(gamma, t, pi1, values, "lower")
        return OddsEvaluation(
            upper_values=upper,
            lower_values=lower,
            upper_derivative=float(d_upper.mean()),
            lower_derivative=float(d_lower.mean()),
        )

    def sensitivity_upper(self, scaled: float | np.ndarray) -> float:
        return float(np.mean(self.evaluate(scaled).upper_values))

    def sensitivity_lower(self, scaled: float | np.ndarray) -> float:
        return float(np.mean(self.evaluate(scaled).lower_values))

    def _clamp_derivative(self, value: float, gamma: float, side: str, flags: list[str]) -> float:
        if gamma == 0:
            return 0.0
        if side == "upper" and value <= 0:
            logger.warning("Upper-bound derivative not positive, clamped", extra={"gamma": gamma, "value": value})
            flags.append(f"upper_derivative_clamped@{gamma}")
            return DERIVATIVE_FLOOR
        if side == "lower" and value >= 0:
            logger.warning("Lower-bound derivative not negative, clamped", extra={"gamma": gamma, "value": value})
            flags.append(f"lower_derivative_clamped@{gamma}")
            return -DERIVATIVE_FLOOR
        return value

    def bounds(self, gammas: Sequence[float]) -> BoundCurve:
        measured = self.measure()
        grid = np.asarray(gammas, dtype=float)
        phi_m = measured.influence

        def at(gamma: float) -> OddsEvaluation:
            return self.evaluate(measured.scaled(gamma), gamma=gamma)

        evaluations = parallel_map(at, list(grid), threads=self.threads)
        flags: list[str] = []
        upper_derivative = np.array(
            [self._clamp_derivative(item.upper_derivative, gamma, "upper", flags) for item, gamma in zip(evaluations, grid)]
        )
        lower_derivative = np.array(
            [self._clamp_derivative(item.lower_derivative, gamma, "lower", flags) for item, gamma in zip(evaluations, grid)]
        )
        posthoc_upper = np.column_stack([item.upper_values for item in evaluations])
        posthoc_lower = np.column_stack([item.lower_values for item in evaluations])

        curve = BoundCurve(
            model=self.name,
            gamma_grid=grid,
            lower=posthoc_lower.mean(axis=0),
            upper=posthoc_upper.mean(axis=0),
            lower_influence=posthoc_lower + phi_m[:, None] * lower_derivative[None, :],
            upper_influence=posthoc_upper + phi_m[:, None] * upper_derivative[None, :],
            posthoc_lower_influence=posthoc_lower,
            posthoc_upper_influence=posthoc_upper,
            psi=self.psi,
            psi_influence=self.crossfitter.amd(self.crossfitter.full).phi,
            measured=measured.value,
            lower_derivative=lower_derivative,
            upper_derivative=upper_derivative,
            flags=tuple(flags),
        )
        violations = curve.ordering_violations(tolerance=1e-6)
        if violations:
            logger.warning("Odds-ratio bounds not ordered on part of the grid", extra={"gammas": violations})
            curve = replace(curve, flags=curve.flags + tuple(f"bounds_unordered@{gamma}" for gamma in violations))
        return curve


def estimate_effect_differences(
    data: Dataset,
    folds: FoldAssignment,
    gamma_grid: Sequence[float],
    factory: NuisanceFactory | None = None,
    family: Sequence[frozenset[int]] | None = None,
    threads: int = 1,
) -> tuple[MeasuredConfounding, BoundCurve]:
    model = EffectDifferencesModel(data, folds, factory=factory, family=family, threads=threads)
    return model.measure(), model.bounds(gamma_grid)


def estimate_odds_ratio(
    data: Dataset,
    folds: FoldAssignment,
    gamma_grid: Sequence[float],
    factory: NuisanceFactory | None = None,
    basis: str = "linear",
    threads: int = 1,
) -> tuple[MeasuredConfounding, BoundCurve]:
    model = OddsRatioModel(data, folds, factory=factory, basis=basis, threads=threads)
    return model.measure(), model.bounds(gamma_grid)


def estimate_outcome_model(
    data: Dataset,
    folds: FoldAssignment,
    family: Sequence[frozenset[int]] | None,
    gamma_grid: Sequence[float],
    factory: NuisanceFactory | None = None,
    threads: int = 1,
) -> tuple[MeasuredConfounding, BoundCurve]:
    model = OutcomeModel(data, folds, factory=factory, family=family, threads=threads)
    return model.measure(), model.bounds(gamma_grid)


def invariance_check(
    sensitivity_bound: Callable[[float | np.ndarray], float],
    curve: BoundCurve,
    measured: MeasuredConfounding,
    side: str = "upper",
    tolerance: float = 1e-10,
) -> bool:
    """True when the calibrated bound equals the uncalibrated one at gamma = Gamma*M on every grid point."""
    calibrated = curve.upper if side == "upper" else curve.lower
    for gamma, value in zip(curve.gamma_grid, calibrated):
        reference = sensitivity_bound(measured.scaled(float(gamma)))
        if abs(value - reference) > tolerance * max(1.0, abs(value)):
            return False
    return True


MODELS: dict[str, type] = {
    EffectDifferencesModel.name: EffectDifferencesModel,
    OddsRatioModel.name: OddsRatioModel,
    OutcomeModel.name: OutcomeModel,
}
