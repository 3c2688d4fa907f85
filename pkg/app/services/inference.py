from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from app.core.errors import BootstrapError, CalSensError, DegenerateConfoundingError, NoCrossingError, NumericalError
from app.services.data import Dataset
from app.services.models import BoundCurve, CalibratedModel, MeasuredConfounding
from app.worker.pool import parallel_map, spawn_seeds

logger = logging.getLogger(__name__)

ROOT_TOLERANCE = 1e-8
MAX_FAILURE_RATE = 0.10


def normal_quantile(level: float) -> float:
    return float(norm.ppf(level))


@dataclass(frozen=True)
class IntervalReport:
    gamma_grid: np.ndarray
    alpha: float
    variance_source: str
    lower: np.ndarray
    upper: np.ndarray
    se_lower: np.ndarray
    se_upper: np.ndarray
    lower_bound: np.ndarray
    upper_bound: np.ndarray
    band_lower: np.ndarray
    band_upper: np.ndarray
    posthoc_band_lower: np.ndarray
    posthoc_band_upper: np.ndarray
    psi: float
    psi_se: float
    psi_lower: float
    psi_upper: float


def _column_se(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.var(values, axis=0, ddof=1) / values.shape[0])


def wald_intervals(curve: BoundCurve, alpha: float = 0.05, variances: BootstrapVariance | None = None) -> IntervalReport:
    """One-sided LB/UB at level alpha and the two-sided band [LB(alpha/2), UB(alpha/2)]."""
    if variances is not None:
        se_lower = np.sqrt(variances.lower_variance)
        se_upper = np.sqrt(variances.upper_variance)
        psi_se = float(np.sqrt(variances.psi_variance))
        source = "bootstrap"
    else:
        se_lower, se_upper, psi_se = curve.se_lower, curve.se_upper, curve.se_psi
        source = "influence"

    if np.any(se_lower == 0) or np.any(se_upper == 0):
        logger.warning("Zero variance: degenerate intervals", extra={"model": curve.model, "source": source})

    one_sided = normal_quantile(1 - alpha)
    two_sided = normal_quantile(1 - alpha / 2)
    posthoc_lower_se = _column_se(curve.posthoc_lower_influence)
    posthoc_upper_se = _column_se(curve.posthoc_upper_influence)
    return IntervalReport(
        gamma_grid=curve.gamma_grid,
        alpha=alpha,
        variance_source=source,
        lower=curve.lower,
        upper=curve.upper,
        se_lower=se_lower,
        se_upper=se_upper,
        lower_bound=curve.lower - one_sided * se_lower,
        upper_bound=curve.upper + one_sided * se_upper,
        band_lower=curve.lower - two_sided * se_lower,
        band_upper=curve.upper + two_sided * se_upper,
        posthoc_band_lower=curve.lower - two_sided * posthoc_lower_se,
        posthoc_band_upper=curve.upper + two_sided * posthoc_upper_se,
        psi=curve.psi,
        psi_se=psi_se,
        psi_lower=curve.psi - two_sided * psi_se,
        psi_upper=curve.psi + two_sided * psi_se,
    )


@dataclass(frozen=True)
class TableRow:
    variable: str
    estimate: float
    lower: float
    upper: float
    standard_error: float


def confounder_table(measured: MeasuredConfounding, curve: BoundCurve, alpha: float = 0.05) -> list[TableRow]:
    """ATE row followed by one row per component, largest first."""
    z = normal_quantile(1 - alpha / 2)
    rows = [
        TableRow(
            variable="ATE (no unmeasured confounding)",
            estimate=curve.psi,
            lower=curve.psi - z * curve.se_psi,
            upper=curve.psi + z * curve.se_psi,
            standard_error=curve.se_psi,
        )
    ]
    signed = measured.model == "odds"
    components = sorted(measured.components, key=lambda item: item.estimate, reverse=True)
    for item in components:
        center = item.signed if signed else item.estimate
        low = center - z * item.standard_error
        rows.append(
            TableRow(
                variable=item.label,
                estimate=center,
                lower=low if signed else max(low, 0.0),
                upper=center + z * item.standard_error,
                standard_error=item.standard_error,
            )
        )
    return rows


@dataclass(frozen=True)
class BootstrapStatistics:
    lower: np.ndarray
    upper: np.ndarray
    psi: float
    measured: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.lower, self.upper, [self.psi, self.measured]])


@dataclass(frozen=True)
class BootstrapVariance:
    lower_variance: np.ndarray
    upper_variance: np.ndarray
    psi_variance: float
    measured_variance: float
    replicates: np.ndarray
    seeds: tuple[int, ...]
    failures: tuple[dict, ...] = field(default_factory=tuple)
    resample_size: int = 0
    n: int = 0


def resample(data: Dataset, rows: np.ndarray) -> Dataset:
    return Dataset.from_arrays(
        data.covariates[rows],
        data.treatment[rows],
        data.outcome[rows],
        names=data.names,
        groups=data.groups,
    )


def bootstrap_variance(
    pipeline: Callable[[Dataset, int], BootstrapStatistics],
    data: Dataset,
    B: int = 100,
    m: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> BootstrapVariance:
    """Nonparametric bootstrap of the whole estimation pipeline.

    Replicates draw m rows with replacement on independent seeded streams; the
    replicate variance is rescaled by m/n, giving the variance of the
    estimator at the full sample size.
    """
    if B < 50:
        raise BootstrapError("Bootstrap needs at least 50 replicates", details={"B": B})
    seeds = spawn_seeds(seed, B)

    def replicate(item: tuple[int, int]) -> np.ndarray | dict:
        index, stream = item
        rng = np.random.default_rng(stream)
        rows = rng.integers(0, data.n, size=m)
        try:
            return pipeline(resample(data, rows), stream).vector()
        except CalSensError as exc:
            logger.warning(
                "Bootstrap replicate failed",
                extra={"replicate": index, "seed": stream, "error": type(exc).__name__},
            )
            return {"replicate": index, "seed": stream, "error": type(exc).__name__, "message": str(exc)}

    outputs = parallel_map(replicate, list(enumerate(seeds)), threads=threads)
    failures = tuple(item for item in outputs if isinstance(item, dict))
    if len(failures) > MAX_FAILURE_RATE * B:
        raise BootstrapError(
            f"{len(failures)} of {B} bootstrap replicates failed",
            details={"failures": list(failures)},
        )

    replicates = np.vstack([item for item in outputs if not isinstance(item, dict)])
    variance = np.var(replicates, axis=0, ddof=1) * (m / data.n)
    grid_size = (replicates.shape[1] - 2) // 2
    logger.info("Bootstrap finished", extra={"replicates": B, "failed": len(failures), "size": m})
    return BootstrapVariance(
        lower_variance=variance[:grid_size],
        upper_variance=variance[grid_size : 2 * grid_size],
        psi_variance=float(variance[-2]),
        measured_variance=float(variance[-1]),
        replicates=replicates,
        seeds=tuple(seeds),
        failures=failures,
        resample_size=m,
        n=data.n,
    )


@dataclass(frozen=True)
class RobustnessValue:
    gamma0: float
    se: float
    crossing: str
    method: str
    residual: float
    psi: float
    measured: float
    lower_ci: float
    upper_ci: float
    endpoints: dict[str, float] = field(default_factory=dict)
    # the delta-method se always uses influence values, also for bootstrap-variance runs
    se_source: str = "influence"


def _closed_form(model: CalibratedModel, alpha: float) -> RobustnessValue:
    measured = model.measure()
    psi = model.psi
    gamma0 = abs(psi) / measured.value
    phi = model.crossfitter.amd(model.crossfitter.full).phi
    crossing = "lower" if psi >= 0 else "upper"
    direction = -1.0 if crossing == "lower" else 1.0
    side_influence = phi + direction * gamma0 * measured.influence
    se = float(np.std(side_influence, ddof=1) / (measured.value * np.sqrt(len(phi))))
    lower = psi - gamma0 * measured.value
    upper = psi + gamma0 * measured.value
    z = normal_quantile(1 - alpha / 2)
    return RobustnessValue(
        gamma0=gamma0,
        se=se,
        crossing=crossing,
        method="closed-form",
        residual=abs(lower * upper),
        psi=psi,
        measured=measured.value,
        lower_ci=max(0.0, gamma0 - z * se),
        upper_ci=gamma0 + z * se,
    )


def _product(model: CalibratedModel, gamma: float) -> tuple[float, BoundCurve]:
    curve = model.bounds([gamma])
    return float(curve.lower[0] * curve.upper[0]), curve


def _z_root(model: CalibratedModel, alpha: float, gamma_max: float) -> RobustnessValue:
    measured = model.measure()
    at_zero, curve_zero = _product(model, 0.0)
    z = normal_quantile(1 - alpha / 2)
    if at_zero <= 0:
        return RobustnessValue(
            gamma0=0.0,
            se=0.0,
            crossing="lower" if curve_zero.lower[0] <= 0 else "upper",
            method="z-root",
            residual=abs(at_zero),
            psi=model.psi,
            measured=measured.value,
            lower_ci=0.0,
            upper_ci=0.0,
        )
    at_max, _ = _product(model, gamma_max)
    if at_max > 0:
        raise NoCrossingError(
            f"Calibrated bounds do not include zero for Gamma in [0, {gamma_max}]",
            details={"psi_product_at_0": at_zero, "psi_product_at_max": at_max, "gamma_max": gamma_max},
        )

    gamma0 = float(
        brentq(lambda gamma: _product(model, gamma)[0], 0.0, gamma_max, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200)
    )
    value, curve = _product(model, gamma0)
    if abs(value) >= ROOT_TOLERANCE:
        logger.warning("Robustness root residual above tolerance", extra={"gamma0": gamma0, "residual": value})

    step = max(1e-4, 1e-4 * gamma0)
    left = max(0.0, gamma0 - step)
    derivative = (_product(model, gamma0 + step)[0] - _product(model, left)[0]) / (gamma0 + step - left)
    if derivative == 0:
        raise NumericalError("Derivative of L*U vanished at the robustness value", details={"gamma0": gamma0})

    lower, upper = float(curve.lower[0]), float(curve.upper[0])
    upper_if = curve.upper_influence[:, 0] - curve.upper_influence[:, 0].mean()
    lower_if = curve.lower_influence[:, 0] - curve.lower_influence[:, 0].mean()
    product_if = upper_if * lower + lower_if * upper
    se = float(np.std(product_if / derivative, ddof=1) / np.sqrt(curve.n))
    return RobustnessValue(
        gamma0=gamma0,
        se=se,
        crossing="lower" if abs(lower) <= abs(upper) else "upper",
        method="z-root",
        residual=abs(value),
        psi=model.psi,
        measured=measured.value,
        lower_ci=max(0.0, gamma0 - z * se),
        upper_ci=gamma0 + z * se,
        endpoints={"psi_product_at_0": at_zero, "psi_product_at_max": at_max},
    )


def robustness_value(model: CalibratedModel, alpha: float = 0.05, gamma_max: float = 50.0) -> RobustnessValue:
    """Smallest Gamma at which the calibrated bounds include zero."""
    measured = model.measure()
    if measured.value <= 0:
        raise DegenerateConfoundingError("Robustness value needs positive measured confounding")
    if model.name == "effect-diff":
        result = _closed_form(model, alpha)
    else:
        result = _z_root(model, alpha, gamma_max)
    logger.info(
        "Robustness value estimated",
        extra={"model": model.name, "gamma0": result.gamma0, "se": result.se, "method": result.method},
    )
    return result


def robustness_from_summary(psi: float, measured: float) -> float:
    """Closed-form robustness value from reported estimates."""
    if measured <= 0:
        raise DegenerateConfoundingError("Robustness value needs positive measured confounding")
    return abs(psi) / measured


def classify_regime(rho: float, rrse: float) -> str:
    """under: calibration shows standard analyses understate robustness."""
    threshold = -2.0 * rho
    if rrse < threshold:
        return "under"
    if rrse == threshold:
        return "boundary"
    return "over"


def variance_ratio(rho: float | np.ndarray, rrse: float | np.ndarray) -> float | np.ndarray:
    return 1.0 + rrse**2 + 2.0 * rho * rrse


@dataclass(frozen=True)
class RegimeReport:
    gamma_grid: np.ndarray
    rho: np.ndarray
    rrse: np.ndarray
    ratio: np.ndarray
    direct_ratio: np.ndarray
    regime: tuple[str, ...]

    @property
    def calibrated_contains_posthoc(self) -> np.ndarray:
        return self.ratio >= 1.0


def regime_analysis(
    u_influence: np.ndarray,
    m_influence: np.ndarray,
    gamma_grid: Sequence[float],
    measured: float,
    derivatives: Sequence[float] | None = None,
) -> RegimeReport:
    """Variance of the calibrated bound relative to the post-hoc one at gamma = Gamma*M.

    `u_influence` is n or n x G, `derivatives` holds dU/dM per grid point and
    defaults to gamma/M (the effect-differences case).
    """
    grid = np.asarray(gamma_grid, dtype=float)
    u_values = np.asarray(u_influence, dtype=float)
    if u_values.ndim == 1:
        u_values = np.repeat(u_values[:, None], len(grid), axis=1)
    m_values = np.asarray(m_influence, dtype=float)
    slopes = grid / measured if derivatives is None else np.asarray(derivatives, dtype=float)

    sd_u = np.std(u_values, axis=0, ddof=1)
    sd_m = float(np.std(m_values, ddof=1))
    if np.any(sd_u == 0) or sd_m == 0:
        raise NumericalError("Regime analysis needs non-zero influence-function variances")

    rho = np.array([np.corrcoef(u_values[:, idx], m_values)[0, 1] for idx in range(len(grid))])
    rrse = slopes * sd_m / sd_u
    direct = np.array(
        [
            np.var(u_values[:, idx] + slopes[idx] * m_values, ddof=1) / np.var(u_values[:, idx], ddof=1)
            for idx in range(len(grid))
        ]
    )
    return RegimeReport(
        gamma_grid=grid,
        rho=rho,
        rrse=rrse,
        ratio=variance_ratio(rho, rrse),
        direct_ratio=direct,
        regime=tuple(classify_regime(float(r), float(s)) for r, s in zip(rho, rrse)),
    )


@dataclass(frozen=True)
class RegimeCell:
    rho: float
    rrse: float
    ratio: float
    regime: str


def regime_map(rhos: Sequence[float], rrses: Sequence[float]) -> list[RegimeCell]:
    cells = []
    for rho in rhos:
        for rrse in rrses:
            if not -1.0 <= rho <= 1.0 or rrse <= 0:
                raise NumericalError("Regime grid needs rho in [-1, 1] and RRSE > 0", details={"rho": rho, "rrse": rrse})
            cells.append(RegimeCell(rho=float(rho), rrse=float(rrse), ratio=float(variance_ratio(rho, rrse)), regime=classify_regime(rho, rrse)))
    return cells
