from __future__ import annotations

import json
import platform
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app.services.inference import IntervalReport, RegimeReport, RobustnessValue, TableRow
from app.services.models import BoundCurve, MeasuredConfounding

FLOAT_FORMAT = "%.17g"
PACKAGES = ("numpy", "scipy", "pandas", "scikit-learn", "joblib", "pydantic", "pydantic-settings")


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset, tuple)):
        return list(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def dumps(record: dict[str, Any]) -> str:
    return json.dumps(record, indent=2, sort_keys=True, default=_plain) + "\n"


def write_json(record: dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(record), encoding="utf-8")
    return path


def write_csv(frame: pd.DataFrame, path: Path, config_hash: str, seed: int) -> Path:
    """CSV with full double precision; every row carries the config hash and seed."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tagged = frame.copy()
    tagged.insert(0, "config_hash", config_hash)
    tagged.insert(1, "seed", seed)
    tagged.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def confounder_frame(rows: list[TableRow]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "variable": [row.variable for row in rows],
            "estimate": [row.estimate for row in rows],
            "lower": [row.lower for row in rows],
            "upper": [row.upper for row in rows],
            "standard_error": [row.standard_error for row in rows],
        }
    )


def bound_curve_frame(report: IntervalReport, measured: MeasuredConfounding) -> pd.DataFrame:
    """Calibrated columns plus the post-hoc band on the gamma = Gamma * M axis."""
    return pd.DataFrame(
        {
            "gamma": report.gamma_grid,
            "lower": report.lower,
            "upper": report.upper,
            "se_lower": report.se_lower,
            "se_upper": report.se_upper,
            "lower_bound": report.lower_bound,
            "upper_bound": report.upper_bound,
            "band_lower": report.band_lower,
            "band_upper": report.band_upper,
            "posthoc_gamma": report.gamma_grid * measured.value,
            "posthoc_band_lower": report.posthoc_band_lower,
            "posthoc_band_upper": report.posthoc_band_upper,
        }
    )


def regime_frame(report: RegimeReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "gamma": report.gamma_grid,
            "rho": report.rho,
            "rrse": report.rrse,
            "ratio": report.ratio,
            "direct_ratio": report.direct_ratio,
            "regime": list(report.regime),
        }
    )


def robustness_record(value: RobustnessValue, config_hash: str, seed: int) -> dict[str, Any]:
    return {
        "config_hash": config_hash,
        "seed": seed,
        "status": "ok",
        "gamma0": value.gamma0,
        "se": value.se,
        "se_source": value.se_source,
        "lower_ci": value.lower_ci,
        "upper_ci": value.upper_ci,
        "crossing": value.crossing,
        "method": value.method,
        "residual": value.residual,
        "psi": value.psi,
        "measured": value.measured,
        "endpoints": value.endpoints,
    }


def measured_record(measured: MeasuredConfounding, curve: BoundCurve) -> dict[str, Any]:
    return {
        "model": measured.model,
        "value": measured.value,
        "maximizer": measured.maximizer_label,
        "runner_up_gap": measured.runner_up_gap,
        "per_arm": measured.per_arm,
        "per_fold": measured.per_fold,
        "flags": list(curve.flags),
    }


def package_versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def manifest(config_hash: str, config: dict[str, Any], seeds: dict[str, Any], files: list[str]) -> dict[str, Any]:
    """Run manifest; no timestamps so equal configs give equal bytes."""
    return {
        "config_hash": config_hash,
        "config": config,
        "seeds": seeds,
        "versions": package_versions(),
        "files": sorted(files),
    }
