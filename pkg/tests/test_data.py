from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from app.core.errors import ConfigurationError, DataValidationError
from app.services.data import (
    ColumnRoles,
    Dataset,
    SubsetSpec,
    exclude,
    leave_one_group_out,
    load_csv,
    make_folds,
    minmax_rescale,
)
from app.services.logistic import fit_logistic, fit_logistic_projection


def _dataset(n: int = 20, d: int = 3) -> Dataset:
    rng = np.random.default_rng(0)
    treatment = np.tile([0.0, 1.0], n // 2)
    return Dataset.from_arrays(rng.normal(size=(n, d)), treatment, rng.normal(size=n))


def test_exclude_is_a_view_sharing_storage() -> None:
    data = _dataset()
    view = exclude(data, SubsetSpec.of(1))
    assert view.d == 2
    assert view.names == ("x1", "x3")
    assert view.matrix is data.matrix
    np.testing.assert_array_equal(view.covariates, data.covariates[:, [0, 2]])


def test_exclude_every_column_fails() -> None:
    with pytest.raises(DataValidationError):
        exclude(_dataset(d=2), SubsetSpec.of(0, 1))


def test_treatment_must_be_binary() -> None:
    with pytest.raises(DataValidationError):
        Dataset.from_arrays(np.zeros((4, 1)), np.array([0, 1, 2, 1]), np.zeros(4))


def test_both_arms_required() -> None:
    with pytest.raises(DataValidationError):
        Dataset.from_arrays(np.zeros((4, 1)), np.ones(4), np.zeros(4))


def test_groups_drive_leave_one_out_family() -> None:
    data = Dataset.from_arrays(np.zeros((4, 3)) + np.arange(3), [0, 1, 0, 1], np.zeros(4), groups=["g", "g", "h"])
    assert leave_one_group_out(data) == (frozenset({0, 1}), frozenset({2}))


def test_folds_are_balanced_and_deterministic() -> None:
    first = make_folds(103, 5, seed=4)
    second = make_folds(103, 5, seed=4)
    np.testing.assert_array_equal(first.fold_of, second.fold_of)
    assert max(first.sizes()) - min(first.sizes()) <= 1
    assert sum(first.sizes()) == 103
    assert not set(first.train_index(0)) & set(first.test_index(0))


def test_more_folds_than_rows() -> None:
    with pytest.raises(DataValidationError):
        make_folds(3, 5, seed=0)


def test_minmax_rescale_maps_to_unit_cube() -> None:
    data = _dataset()
    rescaled, ranges = minmax_rescale(data)
    assert rescaled.covariates.min() == pytest.approx(0.0)
    assert rescaled.covariates.max() == pytest.approx(1.0)
    np.testing.assert_allclose(ranges.from_unit(rescaled.covariates), data.covariates)
    np.testing.assert_allclose(ranges.original_coefficients(ranges.unit_coefficients(np.ones(3))), np.ones(3))


def _frame() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "a": [0, 1, 0, 1, 1, 0],
            "y": [1.0, 2.0, 0.5, 3.0, 2.5, 1.5],
            "age": [30, 40, 50, 60, 35, 45],
            "region": ["n", "s", "e", "n", "s", "e"],
        }
    )


def test_load_csv_one_hot_block_shares_group(tmp_path: Path) -> None:
    path = tmp_path / "data.csv"
    _frame().to_csv(path, index=False)
    data = load_csv(path, ColumnRoles(treatment="a", outcome="y", covariates=("age", "region"), categorical=("region",)))
    assert data.names == ("age", "region=n", "region=s")
    assert data.group_labels == ("age", "region")
    assert data.group_columns("region") == frozenset({1, 2})


def test_load_csv_missing_column_is_named(tmp_path: Path) -> None:
    path = tmp_path / "data.csv"
    _frame().drop(columns=["y"]).to_csv(path, index=False)
    with pytest.raises(ConfigurationError) as info:
        load_csv(path, ColumnRoles(treatment="a", outcome="y", covariates=("age",)))
    assert "y" in str(info.value)


def test_load_csv_reports_missing_value_position(tmp_path: Path) -> None:
    frame = _frame()
    frame.loc[2, "age"] = None
    path = tmp_path / "data.csv"
    frame.to_csv(path, index=False)
    with pytest.raises(DataValidationError) as info:
        load_csv(path, ColumnRoles(treatment="a", outcome="y", covariates=("age",)))
    assert info.value.details == {"row": 3, "column": "age"}


def test_repeated_exclusions_compose() -> None:
    data = _dataset(d=4)
    twice = exclude(exclude(data, SubsetSpec.of(0)), SubsetSpec.of(1))
    once = exclude(data, SubsetSpec.of(0, 1))
    assert twice.names == once.names == ("x3", "x4")
    np.testing.assert_array_equal(twice.covariates, once.covariates)


def test_load_csv_many_level_categorical_drops_one_level(tmp_path: Path) -> None:
    rng = np.random.default_rng(1)
    villages = [f"v{idx}" for idx in range(6)] * 5
    frame = pd.DataFrame(
        {"a": np.tile([0, 1], 15), "y": rng.normal(size=30), "age": rng.uniform(20, 60, size=30), "village": villages}
    )
    path = tmp_path / "villages.csv"
    frame.to_csv(path, index=False)
    data = load_csv(path, ColumnRoles(treatment="a", outcome="y", covariates=("age", "village"), categorical=("village",)))
    assert data.d == 6
    assert data.names[1:] == tuple(f"village=v{idx}" for idx in range(1, 6))
    assert data.group_columns("village") == frozenset(range(1, 6))
    assert data.group_labels == ("age", "village")


def test_rescaled_logistic_slopes_are_slopes_times_range() -> None:
    rng = np.random.default_rng(2)
    covariates = np.column_stack([rng.uniform(-2.0, 3.0, size=4000), rng.uniform(0.0, 10.0, size=4000)])
    treatment = (rng.uniform(size=4000) < expit(0.2 + 0.4 * covariates[:, 0] - 0.1 * covariates[:, 1])).astype(float)
    data = Dataset.from_arrays(covariates, treatment, rng.normal(size=4000))
    rescaled, ranges = minmax_rescale(data)
    original = fit_logistic(data.covariates, data.treatment)
    unit = fit_logistic_projection(rescaled.covariates, rescaled.treatment)
    np.testing.assert_allclose(unit.beta[1:], ranges.unit_coefficients(original.beta[1:]), rtol=1e-5)
    np.testing.assert_allclose(ranges.original_coefficients(unit.beta[1:]), original.beta[1:], rtol=1e-5)
