from __future__ import annotations

import configparser
import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigurationError

ModelName = Literal["effect-diff", "odds", "outcome"]


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    log_level: str = Field(default="INFO", alias="CALSENS_LOG_LEVEL")
    folds: int = Field(default=5, alias="CALSENS_FOLDS")
    seed: int = Field(default=20240101, alias="CALSENS_SEED")
    epsilon: float = Field(default=0.01, alias="CALSENS_EPSILON")
    alpha: float = Field(default=0.05, alias="CALSENS_ALPHA")
    gamma_grid_raw: str = Field(default="0.5:5:0.5", alias="CALSENS_GAMMA_GRID")
    gamma_max: float = Field(default=50.0, alias="CALSENS_GAMMA_MAX")
    threads: int = Field(default=1, alias="CALSENS_THREADS")
    bootstrap_raw: str = Field(default="100,1000", alias="CALSENS_BOOTSTRAP")
    output_dir: str = Field(default="out", alias="CALSENS_OUTPUT_DIR")

    @property
    def gamma_grid(self) -> list[float]:
        from app.utils.validators import parse_gamma_grid

        return parse_gamma_grid(self.gamma_grid_raw)

    @property
    def bootstrap(self) -> tuple[int, int]:
        from app.utils.validators import parse_bootstrap_spec

        return parse_bootstrap_spec(self.bootstrap_raw)


@lru_cache
def get_settings() -> Settings:
    return Settings()


settings = get_settings()


class DataSection(BaseModel):
    path: str
    treatment: str
    outcome: str
    covariates: list[str]
    categorical: list[str] = Field(default_factory=list)
    groups: dict[str, list[str]] = Field(default_factory=dict)

    @field_validator("covariates")
    @classmethod
    def _at_least_one(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("at least one covariate column is required")
        return value


class ModelSection(BaseModel):
    model: ModelName = "effect-diff"
    gamma_grid: list[float] = Field(default_factory=lambda: settings.gamma_grid)
    # None means the leave-one-group-out family
    family: list[list[str]] | None = None

    @field_validator("gamma_grid")
    @classmethod
    def _positive_grid(cls, value: list[float]) -> list[float]:
        if not value or any(gamma <= 0 for gamma in value):
            raise ValueError("gamma grid must be non-empty and strictly positive")
        return sorted(value)


class NuisanceSection(BaseModel):
    propensity: Literal["logistic", "knn"] = "logistic"
    outcome: Literal["linear", "knn", "nadaraya-watson"] = "linear"
    smoother: Literal["linear", "knn", "nadaraya-watson"] = "linear"
    epsilon: float = Field(default_factory=lambda: settings.epsilon, gt=0, lt=0.5)
    neighbors: int | None = Field(default=None, ge=1)
    theta_basis: Literal["linear", "quadratic"] = "linear"


class InferenceSection(BaseModel):
    alpha: float = Field(default_factory=lambda: settings.alpha, gt=0, lt=0.5)
    folds: int = Field(default_factory=lambda: settings.folds, ge=2)
    seed: int = Field(default_factory=lambda: settings.seed)
    variance: Literal["influence", "bootstrap"] | None = None
    bootstrap: tuple[int, int] = Field(default_factory=lambda: settings.bootstrap)
    threads: int = Field(default_factory=lambda: settings.threads, ge=1)
    gamma_max: float = Field(default_factory=lambda: settings.gamma_max, gt=0)

    @property
    def variance_source(self) -> str:
        return self.variance or "influence"


class RunConfig(BaseModel):
    data: DataSection
    model: ModelSection = Field(default_factory=ModelSection)
    nuisance: NuisanceSection = Field(default_factory=NuisanceSection)
    inference: InferenceSection = Field(default_factory=InferenceSection)
    output_dir: str = Field(default_factory=lambda: settings.output_dir)

    def hashed_fields(self) -> dict:
        # output_dir and threads do not change any number, keep them out of the hash
        return self.model_dump(mode="json", exclude={"output_dir": True, "inference": {"threads"}})

    def canonical_json(self) -> str:
        return json.dumps(self.hashed_fields(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:16]

    @property
    def variance_source(self) -> str:
        if self.inference.variance:
            return self.inference.variance
        return "bootstrap" if self.model.model == "odds" else "influence"


def _split_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _parse_family(raw: str) -> list[list[str]] | None:
    raw = raw.strip()
    if not raw or raw == "leave-one-out":
        return None
    return [_split_list(block) for block in raw.split(";") if block.strip()]


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read an INI run file with [data], [model], [nuisance], [inference] sections."""
    from app.utils.validators import parse_bootstrap_spec, parse_gamma_grid

    config_path = Path(path)
    if not config_path.exists():
        raise ConfigurationError(f"Config file not found: {config_path}", details={"path": str(config_path)})

    parser = configparser.ConfigParser(interpolation=None)
    parser.read(config_path, encoding="utf-8")
    if not parser.has_section("data"):
        raise ConfigurationError("Config file has no [data] section", details={"path": str(config_path)})

    data_raw = dict(parser.items("data"))
    data: dict = {
        "path": data_raw.get("path", ""),
        "treatment": data_raw.get("treatment", ""),
        "outcome": data_raw.get("outcome", ""),
        "covariates": _split_list(data_raw.get("covariates", "")),
        "categorical": _split_list(data_raw.get("categorical", "")),
        "groups": {
            key.split(".", 1)[1]: _split_list(value) for key, value in data_raw.items() if key.startswith("group.")
        },
    }
    # relative data paths resolve against the config file location
    if data["path"] and not Path(data["path"]).is_absolute():
        data["path"] = str((config_path.parent / data["path"]).resolve())

    model: dict = {}
    if parser.has_section("model"):
        section = parser["model"]
        if "model" in section:
            model["model"] = section["model"].strip()
        if "gamma_grid" in section:
            model["gamma_grid"] = parse_gamma_grid(section["gamma_grid"])
        if "family" in section:
            model["family"] = _parse_family(section["family"])

    nuisance: dict = dict(parser.items("nuisance")) if parser.has_section("nuisance") else {}

    inference: dict = dict(parser.items("inference")) if parser.has_section("inference") else {}
    if "bootstrap" in inference:
        inference["bootstrap"] = parse_bootstrap_spec(inference["bootstrap"])

    raw = {"data": data, "model": model, "nuisance": nuisance, "inference": inference}
    return build_run_config(raw, overrides)


def build_run_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a nested mapping, applying flat CLI overrides like {"inference.seed": 3}."""
    merged = {key: dict(value) if isinstance(value, dict) else value for key, value in raw.items()}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if "." not in dotted:
            merged[dotted] = value
            continue
        section, key = dotted.split(".", 1)
        merged.setdefault(section, {})[key] = value
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigurationError(
            f"Invalid configuration at {location}: {first['msg']}",
            details={"field": location},
        ) from exc
