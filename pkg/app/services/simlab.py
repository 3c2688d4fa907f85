"""Synthetic data generators with known nuisances and truths."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import nquad
from scipy.optimize import brentq
from scipy.special import expit

from app.core.errors import ConfigurationError, NumericalError
from app.services.data import Dataset
from app.services.nuisance import CallableRegressor, OutcomeRule, PropensityRule, PseudoOutcomeRule
from app.services.theta import eval_omega

logger = logging.getLogger(__name__)

LOG3 = math.log(3.0)


@dataclass(frozen=True)
class Truth:
    value: float
    provenance: str


@dataclass(frozen=True)
class DGPSpec:
    name: str
    params: dict
    truths: dict[str, Truth] = field(default_factory=dict)


@dataclass(frozen=True)
class SimulatedData:
    dataset: Dataset
    hidden: np.ndarray
    seed: int


@dataclass(frozen=True)
class LinearProbabilityDGP:
    """Covariates iid Unif(-1, 1), P(A=1|X) = (2 + b'X)/4, Y = tau*A + g'X + noise.

    Columns listed in `hidden` are drawn but not exposed in the dataset.
    """

    treatment_slopes: tuple[float, ...]
    outcome_slopes: tuple[float, ...]
    effect: float = 0.0
    noise_sd: float = 1.0
    hidden: tuple[int, ...] = ()
    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.treatment_slopes) != len(self.outcome_slopes):
            raise ConfigurationError("Treatment and outcome slopes must have equal length")
        if sum(abs(b) for b in self.treatment_slopes) > 2 + 1e-12:
            raise ConfigurationError("Propensity (2 + b'x)/4 leaves [0, 1]: need sum |b_j| <= 2")

    @property
    def width(self) -> int:
        return len(self.treatment_slopes)

    @property
    def observed(self) -> tuple[int, ...]:
        return tuple(idx for idx in range(self.width) if idx not in self.hidden)

    @property
    def column_names(self) -> tuple[str, ...]:
        return self.names or tuple(f"x{idx + 1}" for idx in range(self.width))

    def sample(self, n: int, seed: int) -> SimulatedData:
        rng = np.random.default_rng(seed)
        covariates = rng.uniform(-1.0, 1.0, size=(n, self.width))
        pi1 = (2.0 + covariates @ np.asarray(self.treatment_slopes)) / 4.0
        treatment = (rng.uniform(size=n) < pi1).astype(float)
        outcome = self.effect * treatment + covariates @ np.asarray(self.outcome_slopes) + self.noise_sd * rng.standard_normal(n)
        observed = list(self.observed)
        dataset = Dataset.from_arrays(
            covariates[:, observed],
            treatment,
            outcome,
            names=[self.column_names[idx] for idx in observed],
        )
        return SimulatedData(dataset=dataset, hidden=covariates[:, list(self.hidden)], seed=seed)

    def propensity(self, covariates: np.ndarray, kept: Sequence[int]) -> np.ndarray:
        """P(A=1 | X_kept); `kept` lists total column indices of `covariates`' columns."""
        slopes = np.asarray([self.treatment_slopes[idx] for idx in kept])
        linear = covariates @ slopes if len(kept) else np.zeros(covariates.shape[0])
        return (2.0 + linear) / 4.0

    def outcome_mean(self, covariates: np.ndarray, kept: Sequence[int], arm: int) -> np.ndarray:
        """E(Y | A=arm, X_kept). Left-out columns enter through E(X_j | A, X_kept) = +-b_j / (12 pi_A)."""
        slopes = np.asarray([self.outcome_slopes[idx] for idx in kept])
        value = self.effect * arm + (covariates @ slopes if len(kept) else np.zeros(covariates.shape[0]))
        pi_arm = self.propensity(covariates, kept)
        pi_arm = pi_arm if arm == 1 else 1.0 - pi_arm
        direction = 1.0 if arm == 1 else -1.0
        for idx in range(self.width):
            if idx not in kept:
                value = value + self.outcome_slopes[idx] * direction * self.treatment_slopes[idx] / (12.0 * pi_arm)
        return value

    def pseudo_outcome(self, covariates: np.ndarray, kept: Sequence[int], arm: int) -> np.ndarray:
        """E{mu_arm(X) | A = 1-arm, X_kept} with X the full covariate vector."""
        if self.hidden:
            raise ConfigurationError("Analytic pseudo-outcomes need every covariate observed")
        other = 1 - arm
        slopes = np.asarray([self.outcome_slopes[idx] for idx in kept])
        value = self.effect * arm + (covariates @ slopes if len(kept) else np.zeros(covariates.shape[0]))
        pi_other = self.propensity(covariates, kept)
        pi_other = pi_other if other == 1 else 1.0 - pi_other
        direction = 1.0 if other == 1 else -1.0
        for idx in range(self.width):
            if idx not in kept:
                value = value + self.outcome_slopes[idx] * direction * self.treatment_slopes[idx] / (12.0 * pi_other)
        return value

    def _inverse_overlap(self, kept: Sequence[int]) -> float:
        """E_{X_kept}[1/pi_1 + 1/pi_0] by numerical integration."""
        if not kept:
            return 4.0
        slopes = np.asarray([self.treatment_slopes[idx] for idx in kept])

        def integrand(*point: float) -> float:
            linear = float(np.dot(slopes, point))
            return 4.0 / (2.0 + linear) + 4.0 / (2.0 - linear)

        value, _ = nquad(integrand, [(-1.0, 1.0)] * len(kept), opts={"limit": 200, "epsabs": 1e-12, "epsrel": 1e-12})
        return value / 2 ** len(kept)

    def adjusted_mean_difference(self, kept: Sequence[int]) -> float:
        """psi_{kept} = E{mu_1(X_kept) - mu_0(X_kept)}."""
        left_out = [idx for idx in range(self.width) if idx not in kept]
        if not left_out:
            return self.effect
        overlap = self._inverse_overlap(kept)
        return self.effect + sum(self.outcome_slopes[idx] * self.treatment_slopes[idx] for idx in left_out) / 12.0 * overlap

    def effect_difference_truths(self) -> dict[str, float]:
        observed = self.observed
        psi = self.adjusted_mean_difference(observed)
        components = [abs(psi - self.adjusted_mean_difference([idx for idx in observed if idx != drop])) for drop in observed]
        top = int(np.argmax(components))
        return {"psi": psi, "measured": components[top], "maximizer": top, **{f"component_{idx}": value for idx, value in enumerate(components)}}


@dataclass(frozen=True)
class AnalyticNuisances:
    """Nuisance factory returning the generator's true nuisance functions."""

    dgp: LinearProbabilityDGP
    epsilon: float = 1e-9

    def _total(self, kept: Sequence[int]) -> tuple[int, ...]:
        observed = self.dgp.observed
        return tuple(observed[idx] for idx in kept)

    def propensity(self, covariates: np.ndarray, treatment: np.ndarray, kept: tuple[int, ...]) -> PropensityRule:
        total = self._total(kept)
        return PropensityRule(
            model=CallableRegressor(lambda x: self.dgp.propensity(x, total)), epsilon=self.epsilon, method="analytic"
        )

    def outcome(
        self, covariates: np.ndarray, treatment: np.ndarray, outcome: np.ndarray, kept: tuple[int, ...], arm: int
    ) -> OutcomeRule:
        total = self._total(kept)
        return OutcomeRule(arm=arm, model=CallableRegressor(lambda x: self.dgp.outcome_mean(x, total, arm)), method="analytic")

    def pseudo_outcome(
        self, covariates: np.ndarray, treatment: np.ndarray, arm: int, kept: tuple[int, ...], outcome_rule: OutcomeRule
    ) -> PseudoOutcomeRule:
        total = self._total(kept)
        return PseudoOutcomeRule(arm=arm, kept=kept, model=CallableRegressor(lambda x: self.dgp.pseudo_outcome(x, total, arm)))


PROXY_EXAMPLE_1 = LinearProbabilityDGP(
    treatment_slopes=(1.0, 1.0), outcome_slopes=(1.0, 1.0), hidden=(1,), names=("X", "W")
)


def proxy_example_2_dgp(coefficient: float) -> LinearProbabilityDGP:
    if coefficient <= 0:
        raise ConfigurationError("Proxy coefficient must be positive", details={"theta": coefficient})
    return LinearProbabilityDGP(
        treatment_slopes=(1.0, coefficient), outcome_slopes=(1.0, coefficient), hidden=(1,), names=("X", "W")
    )


def proxy_truths(dgp: LinearProbabilityDGP) -> dict[str, float]:
    psi_star = dgp.adjusted_mean_difference(range(dgp.width))
    psi_x = dgp.adjusted_mean_difference(dgp.observed)
    psi_empty = dgp.adjusted_mean_difference(())
    gap = abs(psi_x - psi_empty)
    return {
        "psi_star": psi_star,
        "psi_x": psi_x,
        "psi_empty": psi_empty,
        "measured": gap,
        "lower_at_1": psi_x - gap,
        "upper_at_1": psi_x + gap,
    }


def verify_proxy_truths() -> None:
    """Numerical integration must reproduce the closed forms before estimators run."""
    truths = proxy_truths(PROXY_EXAMPLE_1)
    if abs(truths["psi_x"] - LOG3 / 3) > 1e-6 or abs(truths["psi_empty"] - 2 / 3) > 1e-6:
        raise NumericalError("Proxy example 1 truths disagree with their closed forms", details=truths)


def proxy_example_1_spec() -> DGPSpec:
    return DGPSpec(
        name="proxy-example-1",
        params={},
        truths={
            "psi_star": Truth(0.0, "closed form: outcome mean has no treatment term"),
            "psi_x": Truth(LOG3 / 3, "closed form: E over X of 1/(3(X+2)) + 1/(3(2-X))"),
            "psi_empty": Truth(2 / 3, "closed form: difference in arm means"),
            "lower_at_1": Truth(LOG3 / 3 - (2 / 3 - LOG3 / 3), "psi_x - |psi_x - psi_empty|"),
            "upper_at_1": Truth(2 / 3, "psi_x + |psi_x - psi_empty|"),
        },
    )


def solve_proxy_coefficient() -> float:
    """Coefficient making |psi_* - psi_X| = |psi_X - psi_empty| in the second proxy example."""

    def imbalance(coefficient: float) -> float:
        truths = proxy_truths(proxy_example_2_dgp(coefficient))
        return abs(truths["psi_star"] - truths["psi_x"]) - abs(truths["psi_x"] - truths["psi_empty"])

    return float(brentq(imbalance, 0.05, 1.0, xtol=1e-12))


def proxy_example_2_spec(coefficient: float | None = None) -> DGPSpec:
    coefficient = solve_proxy_coefficient() if coefficient is None else coefficient
    gap = LOG3 / (6 * LOG3 - 3)
    return DGPSpec(
        name="proxy-example-2",
        params={"theta": coefficient},
        truths={
            "theta": Truth(math.sqrt(1 / (2 * LOG3 - 1)), "closed form of the bias equality"),
            "gap": Truth(gap, "closed form: log 3 / (6 log 3 - 3)"),
            "upper_at_1": Truth(2 * gap, "psi_x + |psi_x - psi_empty| with psi_x = gap"),
            "lower_at_1": Truth(0.0, "psi_x - |psi_x - psi_empty|"),
        },
    )


def gen_proxy_example_1(n: int, seed: int) -> SimulatedData:
    return PROXY_EXAMPLE_1.sample(n, seed)


def gen_proxy_example_2(n: int, seed: int, coefficient: float | None = None) -> SimulatedData:
    coefficient = solve_proxy_coefficient() if coefficient is None else coefficient
    return proxy_example_2_dgp(coefficient).sample(n, seed)


@dataclass(frozen=True)
class LogisticDGP:
    """Covariates iid Unif(0, 1), A ~ Bernoulli(expit(beta0 + beta'X)), Y = tau*A + g'X + noise."""

    intercept: float
    treatment_slopes: tuple[float, ...]
    outcome_slopes: tuple[float, ...]
    effect: float = 1.0
    noise: str = "normal"
    noise_scale: float = 1.0

    def sample(self, n: int, seed: int) -> Dataset:
        rng = np.random.default_rng(seed)
        d = len(self.treatment_slopes)
        covariates = rng.uniform(0.0, 1.0, size=(n, d))
        prob = expit(self.intercept + covariates @ np.asarray(self.treatment_slopes))
        treatment = (rng.uniform(size=n) < prob).astype(float)
        if self.noise == "uniform":
            noise = rng.uniform(-self.noise_scale, self.noise_scale, size=n)
        else:
            noise = self.noise_scale * rng.standard_normal(n)
        outcome = self.effect * treatment + covariates @ np.asarray(self.outcome_slopes) + noise
        return Dataset.from_arrays(covariates, treatment, outcome)


@dataclass(frozen=True)
class Atoms:
    """Every support point (x, a, y) with its probability."""

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    weight: np.ndarray

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.weight, values))


def _keys(covariates: np.ndarray) -> list[tuple[float, ...]]:
    return [tuple(row) for row in np.asarray(covariates, dtype=float)]


@dataclass(frozen=True)
class FiniteSupportDGP:
    """Discrete law over finitely many (x, a, y) points; exact nuisances by marginalization."""

    points: np.ndarray
    point_probs: np.ndarray
    treated_probs: np.ndarray
    outcome_support: np.ndarray
    outcome_probs: np.ndarray

    @classmethod
    def random(cls, d: int = 2, levels: int = 2, outcome_levels: int = 3, seed: int = 0) -> FiniteSupportDGP:
        rng = np.random.default_rng(seed)
        points = np.array(list(itertools.product(range(levels), repeat=d)), dtype=float)
        k = points.shape[0]
        return cls(
            points=points,
            point_probs=rng.dirichlet(np.full(k, 3.0)),
            treated_probs=rng.uniform(0.2, 0.8, size=k),
            outcome_support=np.sort(rng.normal(size=outcome_levels) * 2.0),
            outcome_probs=rng.dirichlet(np.full(outcome_levels, 2.0), size=(k, 2)),
        )

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def atoms(self) -> Atoms:
        rows = []
        for idx, point in enumerate(self.points):
            for arm in (0, 1):
                p_arm = self.treated_probs[idx] if arm == 1 else 1 - self.treated_probs[idx]
                for level, y in enumerate(self.outcome_support):
                    weight = self.point_probs[idx] * p_arm * self.outcome_probs[idx, arm, level]
                    rows.append((*point, arm, y, weight))
        table = np.array(rows)
        return Atoms(covariates=table[:, : self.d], treatment=table[:, self.d], outcome=table[:, self.d + 1], weight=table[:, self.d + 2])

    def sample(self, n: int, seed: int) -> Dataset:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(self.points), size=n, p=self.point_probs)
        treatment = (rng.uniform(size=n) < self.treated_probs[idx]).astype(float)
        arms = treatment.astype(int)
        cumulative = np.cumsum(self.outcome_probs[idx, arms], axis=1)
        levels = np.minimum((rng.uniform(size=n)[:, None] > cumulative).sum(axis=1), len(self.outcome_support) - 1)
        return Dataset.from_arrays(self.points[idx], treatment, self.outcome_support[levels])

    def _cell_mean(self, arm: int) -> np.ndarray:
        return self.outcome_probs[:, arm] @ self.outcome_support

    def _marginal_table(self, kept: Sequence[int], weights: np.ndarray, values: np.ndarray) -> dict[tuple[float, ...], float]:
        """E[values | X_kept] under point weights, keyed by the kept coordinates."""
        table: dict[tuple[float, ...], list[float]] = {}
        for point, weight, value in zip(self.points, weights, values):
            key = tuple(point[list(kept)])
            total = table.setdefault(key, [0.0, 0.0])
            total[0] += weight * value
            total[1] += weight
        return {key: num / den for key, (num, den) in table.items()}

    @staticmethod
    def _lookup(table: dict[tuple[float, ...], float], covariates: np.ndarray) -> np.ndarray:
        return np.array([table[key] for key in _keys(covariates)])

    def propensity(self, kept: Sequence[int]) -> CallableRegressor:
        table = self._marginal_table(kept, self.point_probs, self.treated_probs)
        return CallableRegressor(lambda x: self._lookup(table, x))

    def _arm_weights(self, arm: int) -> np.ndarray:
        return self.point_probs * (self.treated_probs if arm == 1 else 1 - self.treated_probs)

    def outcome_mean(self, kept: Sequence[int], arm: int) -> CallableRegressor:
        table = self._marginal_table(kept, self._arm_weights(arm), self._cell_mean(arm))
        return CallableRegressor(lambda x: self._lookup(table, x))

    def pseudo_outcome(self, kept: Sequence[int], arm: int) -> CallableRegressor:
        table = self._marginal_table(kept, self._arm_weights(1 - arm), self._cell_mean(arm))
        return CallableRegressor(lambda x: self._lookup(table, x))

    def adjusted_mean_difference(self, kept: Sequence[int]) -> float:
        projected = self.points[:, list(kept)]
        treated = self.outcome_mean(kept, 1).predict(projected)
        control = self.outcome_mean(kept, 0).predict(projected)
        return float(np.dot(self.point_probs, treated - control))

    def propensity_norm_sq(self, arm: int) -> float:
        pi1 = self.treated_probs
        pi_arm = pi1 if arm == 1 else 1 - pi1
        return float(np.dot(self.point_probs, pi_arm**2))

    def outcome_gap_norm_sq(self, kept: Sequence[int], arm: int) -> float:
        projected = self.points[:, list(kept)]
        gap = self.outcome_mean(kept, arm).predict(projected) - self.pseudo_outcome(kept, arm).predict(projected)
        return float(np.dot(self.point_probs, gap**2))

    def theta(self, arm: int, sign: str, t: float) -> CallableRegressor:
        """Exact theta_arm^{sign}(x; t) per support point by bracketing the conditional moment."""
        tau = t if sign == "-" else 1.0 / t
        table = {}
        for idx, point in enumerate(self.points):
            probs = self.outcome_probs[idx, arm]

            def moment(theta: float, probs: np.ndarray = probs) -> float:
                return float(np.dot(probs, eval_omega(self.outcome_support, theta, tau)))

            low, high = float(self.outcome_support[0]), float(self.outcome_support[-1])
            table[tuple(point)] = float(brentq(moment, low, high, xtol=1e-14)) if low < high else low
        return CallableRegressor(lambda x: self._lookup(table, x))

    def nu(self, arm: int, sign: str, t: float) -> CallableRegressor:
        tau = t if sign == "-" else 1.0 / t
        thresholds = self.theta(arm, sign, t)
        table = {}
        for idx, point in enumerate(self.points):
            theta = thresholds.predict(point[None, :])[0]
            probs = self.outcome_probs[idx, arm]
            below = float(probs[self.outcome_support < theta].sum())
            table[tuple(point)] = (1.0 - below) + tau * below
        return CallableRegressor(lambda x: self._lookup(table, x))

    def odds_bound(self, t: float, side: str) -> float:
        """Upper (lower) bound on the ATE: E[AY + (1-A) theta_1] - E[(1-A)Y + A theta_0]."""
        treated_sign, control_sign = ("+", "-") if side == "upper" else ("-", "+")
        theta1 = self.theta(1, treated_sign, t).predict(self.points)
        theta0 = self.theta(0, control_sign, t).predict(self.points)
        pi1 = self.treated_probs
        treated = pi1 * self._cell_mean(1) + (1 - pi1) * theta1
        control = (1 - pi1) * self._cell_mean(0) + pi1 * theta0
        return float(np.dot(self.point_probs, treated - control))


@dataclass(frozen=True)
class FiniteSupportNuisances:
    dgp: FiniteSupportDGP
    epsilon: float = 1e-9

    def propensity(self, covariates: np.ndarray, treatment: np.ndarray, kept: tuple[int, ...]) -> PropensityRule:
        return PropensityRule(model=self.dgp.propensity(kept), epsilon=self.epsilon, method="analytic")

    def outcome(
        self, covariates: np.ndarray, treatment: np.ndarray, outcome: np.ndarray, kept: tuple[int, ...], arm: int
    ) -> OutcomeRule:
        return OutcomeRule(arm=arm, model=self.dgp.outcome_mean(kept, arm), method="analytic")

    def pseudo_outcome(
        self, covariates: np.ndarray, treatment: np.ndarray, arm: int, kept: tuple[int, ...], outcome_rule: OutcomeRule
    ) -> PseudoOutcomeRule:
        return PseudoOutcomeRule(arm=arm, kept=kept, model=self.dgp.pseudo_outcome(kept, arm))
