from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from app.core.config import RunConfig
from app.core.errors import CalSensError, DegenerateConfoundingError, NoCrossingError
from app.services.crossfit import LearnedNuisances
from app.services.data import ColumnRanges, ColumnRoles, Dataset, FoldAssignment, SubsetSpec, load_csv, make_folds, minmax_rescale
from app.services.inference import (
    BootstrapStatistics,
    BootstrapVariance,
    IntervalReport,
    RegimeReport,
    RobustnessValue,
    TableRow,
    bootstrap_variance,
    confounder_table,
    regime_analysis,
    robustness_value,
    wald_intervals,
)
from app.services.models import BoundCurve, CalibratedModel, EffectDifferencesModel, MeasuredConfounding, OddsRatioModel, OutcomeModel
from app.services.nuisance import NuisanceOptions
from app.utils import exports

logger = logging.getLogger(__name__)


@dataclass
class AnalysisContext:
    """State handed from one analysis stage to the next."""

    config: RunConfig
    dataset: Dataset | None = None
    ranges: ColumnRanges | None = None
    folds: FoldAssignment | None = None
    model: CalibratedModel | None = None
    measured: MeasuredConfounding | None = None
    curve: BoundCurve | None = None
    report: IntervalReport | None = None
    table: list[TableRow] = field(default_factory=list)
    variances: BootstrapVariance | None = None
    robustness: RobustnessValue | None = None
    robustness_error: dict | None = None
    regime: RegimeReport | None = None
    files: list[str] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    @property
    def seed(self) -> int:
        return self.config.inference.seed


def _family(config: RunConfig, dataset: Dataset) -> list[frozenset[int]] | None:
    if not config.model.family:
        return None
    return [SubsetSpec.from_groups(dataset, labels).excluded for labels in config.model.family]


def build_model(config: RunConfig, dataset: Dataset, folds: FoldAssignment) -> CalibratedModel:
    factory = LearnedNuisances(NuisanceOptions.from_section(config.nuisance))
    threads = config.inference.threads
    name = config.model.model
    if name == "odds":
        return OddsRatioModel(dataset, folds, factory=factory, basis=config.nuisance.theta_basis, threads=threads)
    family = _family(config, dataset)
    if name == "outcome":
        return OutcomeModel(dataset, folds, factory=factory, family=family, threads=threads)
    return EffectDifferencesModel(dataset, folds, factory=factory, family=family, threads=threads)


def load_stage(ctx: AnalysisContext) -> None:
    """Stage 1: read the CSV and rescale covariates to the unit cube for the odds model."""
    data = ctx.config.data
    roles = ColumnRoles(
        treatment=data.treatment,
        outcome=data.outcome,
        covariates=tuple(data.covariates),
        categorical=tuple(data.categorical),
        groups={label: tuple(columns) for label, columns in data.groups.items()},
    )
    dataset = load_csv(data.path, roles)
    if ctx.config.model.model == "odds":
        dataset, ctx.ranges = minmax_rescale(dataset)
    ctx.dataset = dataset
    ctx.folds = make_folds(dataset.n, ctx.config.inference.folds, ctx.seed)


def estimate_stage(ctx: AnalysisContext) -> None:
    """Stage 2: measured confounding and the calibrated bound curve."""
    ctx.model = build_model(ctx.config, ctx.dataset, ctx.folds)
    ctx.measured = ctx.model.measure()
    ctx.curve = ctx.model.bounds(ctx.config.model.gamma_grid)


def bootstrap_pipeline(config: RunConfig) -> Callable[[Dataset, int], BootstrapStatistics]:
    """Whole-pipeline replicate: fresh folds and nuisance fits on the resample."""

    def replicate(data: Dataset, seed: int) -> BootstrapStatistics:
        folds = make_folds(data.n, config.inference.folds, seed)
        model = build_model(config, data, folds)
        measured = model.measure()
        curve = model.bounds(config.model.gamma_grid)
        return BootstrapStatistics(lower=curve.lower, upper=curve.upper, psi=curve.psi, measured=measured.value)

    return replicate


def inference_stage(ctx: AnalysisContext) -> None:
    """Stage 3: intervals from influence values or the bootstrap."""
    inference = ctx.config.inference
    if ctx.config.variance_source == "bootstrap":
        replicates, size = inference.bootstrap
        ctx.variances = bootstrap_variance(
            bootstrap_pipeline(ctx.config), ctx.dataset, B=replicates, m=size, seed=inference.seed, threads=inference.threads
        )
    ctx.report = wald_intervals(ctx.curve, inference.alpha, ctx.variances)
    ctx.table = confounder_table(ctx.measured, ctx.curve, inference.alpha)


def robustness_stage(ctx: AnalysisContext) -> None:
    """Stage 4: robustness value; a missing crossing is recorded, not fatal."""
    try:
        ctx.robustness = robustness_value(ctx.model, ctx.config.inference.alpha, ctx.config.inference.gamma_max)
    except (NoCrossingError, DegenerateConfoundingError) as exc:
        logger.warning("Robustness value unavailable", extra={"error": type(exc).__name__})
        ctx.robustness_error = exc.to_record()


def regime_stage(ctx: AnalysisContext) -> None:
    """Stage 5: calibrated vs post-hoc variance comparison on the upper bound."""
    if ctx.measured.influence is None:
        return
    try:
        ctx.regime = regime_analysis(
            ctx.curve.posthoc_upper_influence,
            ctx.measured.influence,
            ctx.curve.gamma_grid,
            ctx.measured.value,
            derivatives=ctx.curve.upper_derivative,
        )
    except CalSensError as exc:
        logger.warning("Regime analysis skipped", extra={"error": type(exc).__name__})


def _table_frame(ctx: AnalysisContext) -> pd.DataFrame:
    frame = exports.confounder_frame(ctx.table)
    if ctx.config.model.model == "odds" and ctx.ranges is not None:
        frame["odds_ratio"] = np.exp(frame["estimate"])
        spans = dict(zip(ctx.ranges.names, ctx.ranges.span))
        frame["original_scale"] = [
            estimate / spans[name] if name in spans else np.nan for name, estimate in zip(frame["variable"], frame["estimate"])
        ]
        frame.loc[0, "odds_ratio"] = np.nan
    return frame


def export_stage(ctx: AnalysisContext, out_dir: Path) -> None:
    """Stage 6: artifacts, each tagged with the config hash and seed."""
    digest, seed = ctx.config_hash, ctx.seed
    written = [
        exports.write_csv(_table_frame(ctx), out_dir / "confounder_table.csv", digest, seed),
        exports.write_csv(exports.bound_curve_frame(ctx.report, ctx.measured), out_dir / "bound_curve.csv", digest, seed),
    ]
    if ctx.robustness is not None:
        record = exports.robustness_record(ctx.robustness, digest, seed)
    else:
        record = {"config_hash": digest, "seed": seed, "status": "unavailable", **(ctx.robustness_error or {})}
    written.append(exports.write_json(record, out_dir / "robustness.json"))
    if ctx.regime is not None:
        written.append(exports.write_csv(exports.regime_frame(ctx.regime), out_dir / "regime.csv", digest, seed))
    measured = {"config_hash": digest, "seed": seed, **exports.measured_record(ctx.measured, ctx.curve)}
    measured["variance_source"] = ctx.report.variance_source
    written.append(exports.write_json(measured, out_dir / "measured.json"))

    seeds = {"run": seed, "folds": ctx.folds.seed}
    if ctx.variances is not None:
        seeds["bootstrap"] = list(ctx.variances.seeds)
        seeds["bootstrap_failures"] = list(ctx.variances.failures)
    ctx.files = [path.name for path in written] + ["manifest.json"]
    manifest = exports.manifest(digest, ctx.config.hashed_fields(), seeds, ctx.files)
    exports.write_json(manifest, out_dir / "manifest.json")


def run_analysis(config: RunConfig, out_dir: Path | None = None) -> AnalysisContext:
    ctx = AnalysisContext(config=config)
    load_stage(ctx)
    estimate_stage(ctx)
    inference_stage(ctx)
    robustness_stage(ctx)
    regime_stage(ctx)
    if out_dir is not None:
        export_stage(ctx, out_dir)
    logger.info(
        "Analysis finished",
        extra={"model": config.model.model, "config_hash": ctx.config_hash, "psi": ctx.curve.psi, "measured": ctx.measured.value},
    )
    return ctx


def run_robustness(config: RunConfig, out_dir: Path | None = None) -> RobustnessValue:
    ctx = AnalysisContext(config=config)
    load_stage(ctx)
    ctx.model = build_model(config, ctx.dataset, ctx.folds)
    value = robustness_value(ctx.model, config.inference.alpha, config.inference.gamma_max)
    if out_dir is not None:
        exports.write_json(exports.robustness_record(value, ctx.config_hash, ctx.seed), out_dir / "robustness.json")
    return value
