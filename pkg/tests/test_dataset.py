# tests/test_dataset.py

from pathlib import Path

import numpy as np
import pytest

from src.constants import DatasetRole
from src.dataset import (
    Dataset,
    DatasetArgumentError,
    DatasetDimensionError,
    DatasetFormatError,
    remap_binary_labels,
)

covariates = np.array([[0.1, 1.0], [0.2, 2.0], [0.3, 3.0]])
labels = np.array([1.0, 0.0, 1.0])

DATA_DIR = Path(__file__).parent / "data"


def test_creation_and_properties():
    data = Dataset(covariates, labels)
    assert data.n_rows == 3 and data.n_features == 2
    assert data.role == DatasetRole.TRAIN
    assert data.has_labels and not data.labels_heldout
    assert len(data) == 3


def test_flat_input_is_one_column():
    data = Dataset([1.0, 2.0, 3.0])
    assert data.X.shape == (3, 1)


@pytest.mark.parametrize(
    "X, y, message",
    [
        (np.zeros((0, 2)), None, "nonempty"),
        (covariates, labels[:2], "labels for 3 rows"),
        ([[1.0, np.inf]], None, "NaN or Inf"),
    ],
)
def test_invalid_datasets(X, y, message):
    with pytest.raises(DatasetArgumentError, match=message):
        Dataset(X, y)


def test_test_labels_must_be_heldout():
    with pytest.raises(DatasetArgumentError, match="held out"):
        Dataset(covariates, labels, role="test")
    data = Dataset(covariates, labels, role=DatasetRole.TEST, labels_heldout=True)
    assert data.labels_heldout


def test_data_is_read_only():
    data = Dataset(covariates, labels)
    with pytest.raises(ValueError):
        data.X[0, 0] = 5.0


def test_subset_and_without_labels():
    data = Dataset(covariates, labels)
    part = data.subset([2, 0])
    assert part.X.tolist() == [[0.3, 3.0], [0.1, 1.0]]
    assert part.y.tolist() == [1.0, 1.0]
    assert not data.without_labels().has_labels


def test_check_same_features():
    with pytest.raises(DatasetDimensionError):
        Dataset(covariates).check_same_features(Dataset([1.0]))


# CSV input / output


def test_csv_round_trip(tmp_path):
    path = tmp_path / "train.csv"
    Dataset(covariates, labels).to_csv(path)
    loaded = Dataset.from_csv(path)
    assert loaded == Dataset(covariates, labels)


def test_csv_without_labels(tmp_path):
    path = tmp_path / "test.csv"
    Dataset(covariates, role="test").to_csv(path)
    loaded = Dataset.from_csv(path, role="test")
    assert not loaded.has_labels


def test_fixture_csv():
    data = Dataset.from_csv(DATA_DIR / "small_train.csv")
    assert data.n_features == 1
    assert data.has_labels


def test_csv_with_bad_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match="x1..xp"):
        Dataset.from_csv(path)


# Label remapping


@pytest.mark.parametrize(
    "raw, expected",
    [
        ([0, 1, 1], [0.0, 1.0, 1.0]),
        ([-1, 1, -1], [0.0, 1.0, 0.0]),
        ([2, 4, 4], [0.0, 1.0, 1.0]),
    ],
)
def test_remap_binary_labels(raw, expected):
    assert remap_binary_labels(raw).tolist() == expected


def test_remap_rejects_three_values():
    with pytest.raises(DatasetArgumentError):
        remap_binary_labels([0, 1, 2])
