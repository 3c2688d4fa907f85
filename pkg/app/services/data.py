from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from app.core.errors import ConfigurationError, DataValidationError

logger = logging.getLogger(__name__)


def _frozen(array: np.ndarray, dtype: type) -> np.ndarray:
    out = np.ascontiguousarray(array, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Observations Z = (X, A, Y).

    `matrix` holds every stored covariate column; `kept` selects the columns
    visible through this object, so views made by `exclude` share storage.
    """

    matrix: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    stored_names: tuple[str, ...]
    stored_groups: tuple[str, ...]
    kept: tuple[int, ...]

    def __post_init__(self) -> None:
        n_rows, n_cols = self.matrix.shape
        if n_rows < 2:
            raise DataValidationError("Dataset needs at least 2 observations", details={"n": n_rows})
        if not self.kept:
            raise DataValidationError("Dataset needs at least 1 covariate")
        if len(self.stored_names) != n_cols or len(self.stored_groups) != n_cols:
            raise DataValidationError("Covariate names and groups must match the column count")
        if self.treatment.shape != (n_rows,) or self.outcome.shape != (n_rows,):
            raise DataValidationError("Treatment and outcome must have one value per row")
        if not np.all(np.isin(self.treatment, (0.0, 1.0))):
            raise DataValidationError("Treatment values must be exactly 0 or 1")
        treated = int(self.treatment.sum())
        if treated == 0 or treated == n_rows:
            raise DataValidationError("Both treatment arms must be non-empty", details={"treated": treated})
        if not (np.all(np.isfinite(self.matrix)) and np.all(np.isfinite(self.outcome))):
            raise DataValidationError("Dataset contains missing or non-finite values")

    @classmethod
    def from_arrays(
        cls,
        covariates: np.ndarray,
        treatment: np.ndarray,
        outcome: np.ndarray,
        names: list[str] | tuple[str, ...] | None = None,
        groups: list[str] | tuple[str, ...] | None = None,
    ) -> Dataset:
        matrix = np.asarray(covariates, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        d = matrix.shape[1]
        names = tuple(names) if names is not None else tuple(f"x{idx + 1}" for idx in range(d))
        groups = tuple(groups) if groups is not None else names
        return cls(
            matrix=_frozen(matrix, float),
            treatment=_frozen(np.asarray(treatment).ravel(), float),
            outcome=_frozen(np.asarray(outcome).ravel(), float),
            stored_names=names,
            stored_groups=groups,
            kept=tuple(range(d)),
        )

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return len(self.kept)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.stored_names[idx] for idx in self.kept)

    @property
    def groups(self) -> tuple[str, ...]:
        return tuple(self.stored_groups[idx] for idx in self.kept)

    @property
    def covariates(self) -> np.ndarray:
        return self.columns(self.kept)

    @property
    def group_labels(self) -> tuple[str, ...]:
        """Group labels of visible columns in first-appearance order."""
        return tuple(dict.fromkeys(self.groups))

    def group_columns(self, label: str) -> frozenset[int]:
        columns = frozenset(idx for idx in self.kept if self.stored_groups[idx] == label)
        if not columns:
            raise DataValidationError(f"Unknown covariate group: {label}", details={"group": label})
        return columns

    def columns(self, kept: tuple[int, ...]) -> np.ndarray:
        """Covariate matrix for absolute column indices; may have zero columns."""
        if kept == tuple(range(self.matrix.shape[1])):
            return self.matrix
        return self.matrix[:, list(kept)]

    def arm_mask(self, arm: int) -> np.ndarray:
        return self.treatment == arm


@dataclass(frozen=True)
class SubsetSpec:
    """Excluded absolute column indices S, with an optional family of such sets."""

    excluded: frozenset[int] = field(default_factory=frozenset)
    family: tuple[frozenset[int], ...] | None = None

    def __post_init__(self) -> None:
        if self.family is not None and len(set(self.family)) != len(self.family):
            raise DataValidationError("Sets within a subset family must be distinct")

    @classmethod
    def of(cls, *columns: int) -> SubsetSpec:
        return cls(excluded=frozenset(columns))

    @classmethod
    def from_groups(cls, dataset: Dataset, labels: list[str] | tuple[str, ...]) -> SubsetSpec:
        excluded: set[int] = set()
        for label in labels:
            excluded |= dataset.group_columns(label)
        return cls(excluded=frozenset(excluded))

    def validate(self, dataset: Dataset) -> None:
        stored = set(range(dataset.matrix.shape[1]))
        sets = [self.excluded, *(self.family or ())]
        for subset in sets:
            unknown = sorted(subset - stored)
            if unknown:
                raise DataValidationError("Subset refers to unknown columns", details={"columns": unknown})
            if set(dataset.kept) <= subset:
                raise DataValidationError("A subset cannot exclude every covariate")


def leave_one_group_out(dataset: Dataset) -> tuple[frozenset[int], ...]:
    return tuple(dataset.group_columns(label) for label in dataset.group_labels)


def exclude(dataset: Dataset, spec: SubsetSpec) -> Dataset:
    if set(dataset.kept) <= spec.excluded:
        raise DataValidationError(
            "Excluding every covariate is not allowed",
            details={"excluded": sorted(spec.excluded)},
        )
    unknown = sorted(spec.excluded - set(range(dataset.matrix.shape[1])))
    if unknown:
        raise DataValidationError("Subset refers to unknown columns", details={"columns": unknown})
    kept = tuple(idx for idx in dataset.kept if idx not in spec.excluded)
    return replace(dataset, kept=kept)


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    K: int
    seed: int

    def sizes(self) -> list[int]:
        return np.bincount(self.fold_of, minlength=self.K).tolist()

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)


def make_folds(n: int, K: int, seed: int) -> FoldAssignment:
    """Random partition of n rows into K folds whose sizes differ by at most one."""
    if K < 2:
        raise DataValidationError("Cross-fitting needs at least 2 folds", details={"K": K})
    if K > n:
        raise DataValidationError("More folds than observations", details={"K": K, "n": n})
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % K
    fold_of.setflags(write=False)
    return FoldAssignment(fold_of=fold_of, K=K, seed=seed)


@dataclass(frozen=True)
class ColumnRanges:
    names: tuple[str, ...]
    minimum: np.ndarray
    span: np.ndarray

    def to_unit(self, values: np.ndarray) -> np.ndarray:
        return (values - self.minimum) / self.span

    def from_unit(self, values: np.ndarray) -> np.ndarray:
        return values * self.span + self.minimum

    def unit_coefficients(self, slopes: np.ndarray) -> np.ndarray:
        """Slopes on the original scale mapped to the unit-cube scale (coefficient x range)."""
        return np.asarray(slopes) * self.span

    def original_coefficients(self, slopes: np.ndarray) -> np.ndarray:
        return np.asarray(slopes) / self.span


def minmax_rescale(dataset: Dataset) -> tuple[Dataset, ColumnRanges]:
    values = dataset.covariates
    minimum = values.min(axis=0)
    span = values.max(axis=0) - minimum
    for idx, width in enumerate(span):
        if width <= 0:
            name = dataset.names[idx]
            raise DataValidationError(f"Covariate {name!r} is constant and cannot be rescaled", details={"column": name})

    ranges = ColumnRanges(names=dataset.names, minimum=minimum, span=span)
    rescaled = Dataset.from_arrays(
        ranges.to_unit(values),
        dataset.treatment,
        dataset.outcome,
        names=dataset.names,
        groups=dataset.groups,
    )
    return rescaled, ranges


@dataclass(frozen=True)
class ColumnRoles:
    treatment: str
    outcome: str
    covariates: tuple[str, ...]
    categorical: tuple[str, ...] = ()
    groups: dict[str, tuple[str, ...]] = field(default_factory=dict)


def _numeric(frame: pd.DataFrame, column: str) -> pd.Series:
    series = pd.to_numeric(frame[column], errors="coerce")
    bad = series.isna() & frame[column].notna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataValidationError(
            f"Non-numeric value in column {column!r} at row {row + 1}",
            details={"row": row + 1, "column": column},
        )
    return series


def load_csv(path: str | Path, roles: ColumnRoles) -> Dataset:
    csv_path = Path(path)
    if not csv_path.exists():
        raise ConfigurationError(f"Data file not found: {csv_path}", details={"path": str(csv_path)})

    frame = pd.read_csv(csv_path)
    required = [roles.treatment, roles.outcome, *roles.covariates]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise ConfigurationError(f"Missing column(s): {', '.join(missing)}", details={"columns": missing})
    unknown_categorical = [column for column in roles.categorical if column not in roles.covariates]
    if unknown_categorical:
        raise ConfigurationError(
            f"Categorical column(s) not listed as covariates: {', '.join(unknown_categorical)}",
            details={"columns": unknown_categorical},
        )

    na_cells = frame[required].isna().to_numpy()
    if na_cells.any():
        row, col = (int(item) for item in np.argwhere(na_cells)[0])
        raise DataValidationError(
            f"Missing value at row {row + 1}, column {required[col]!r}",
            details={"row": row + 1, "column": required[col]},
        )

    treatment = _numeric(frame, roles.treatment)
    if not treatment.isin([0, 1]).all():
        bad = sorted(set(treatment[~treatment.isin([0, 1])].tolist()))
        raise DataValidationError(
            f"Treatment column {roles.treatment!r} must be binary, found {bad[:5]}",
            details={"column": roles.treatment, "values": bad[:5]},
        )
    outcome = _numeric(frame, roles.outcome)

    group_of: dict[str, str] = {column: column for column in roles.covariates}
    seen: set[str] = set()
    for label, sources in roles.groups.items():
        for source in sources:
            if source not in group_of:
                raise ConfigurationError(
                    f"Group {label!r} refers to unknown covariate {source!r}",
                    details={"group": label, "column": source},
                )
            if source in seen:
                raise ConfigurationError(f"Covariate {source!r} belongs to more than one group", details={"column": source})
            seen.add(source)
            group_of[source] = label

    blocks: list[pd.DataFrame] = []
    names: list[str] = []
    groups: list[str] = []
    for column in roles.covariates:
        if column in roles.categorical:
            encoded = pd.get_dummies(
                frame[column].astype("category"), prefix=column, prefix_sep="=", drop_first=True, dtype=float
            )
            if encoded.shape[1] == 0:
                raise DataValidationError(f"Categorical covariate {column!r} has a single level", details={"column": column})
        else:
            encoded = _numeric(frame, column).astype(float).to_frame(column)
        blocks.append(encoded)
        names.extend(str(item) for item in encoded.columns)
        groups.extend([group_of[column]] * encoded.shape[1])

    covariates = pd.concat(blocks, axis=1).to_numpy(dtype=float)
    dataset = Dataset.from_arrays(covariates, treatment.to_numpy(), outcome.to_numpy(), names=names, groups=groups)
    logger.info(
        "Loaded dataset",
        extra={"path": str(csv_path), "n": dataset.n, "d": dataset.d, "groups": len(dataset.group_labels)},
    )
    return dataset
