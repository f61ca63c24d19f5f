from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .constants import DatasetRole
from .utilityfuncs import as_float_matrix, as_float_vector

logger = logging.getLogger(__name__)

LABEL_COLUMN = "y"


class DatasetError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


class DatasetArgumentError(DatasetError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Invalid dataset argument: {message}")


class DatasetDimensionError(DatasetError):
    def __init__(self, first_shape, second_shape) -> None:
        super().__init__(
            f"Column dimensions do not match: {first_shape} and {second_shape}"
        )


class DatasetFormatError(DatasetError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Malformed dataset file: {message}")


class Dataset:
    def __init__(
        self,
        X,
        y=None,
        role: Union[DatasetRole, str] = DatasetRole.TRAIN,
        labels_heldout: bool = False,
    ) -> None:
        """
        Initializes a Dataset (covariate matrix with optional labels).

        Args:
            X: Covariates, rows are observations. A flat array is read as n
                scalar observations.
            y: Optional labels, one per row.
            role (Union[DatasetRole, str]): Train or test role.
            labels_heldout (bool): Marks test labels that are kept only for
                final error reporting.

        Raises:
            DatasetArgumentError: If the data is empty, contains NaN / Inf,
                the label length does not match, or a test set carries
                labels without being marked as held out.
        """
        func_name = Dataset.__init__.__qualname__
        try:
            role = DatasetRole(role) if isinstance(role, str) else role
        except ValueError as e:
            raise DatasetArgumentError(f"{func_name}: unknown role '{role}'") from e
        try:
            matrix = as_float_matrix(X, "X").copy()
            labels = None if y is None else as_float_vector(y, "y").copy()
        except ValueError as e:
            raise DatasetArgumentError(f"{func_name}: {e}") from e

        if matrix.shape[0] == 0 or matrix.shape[1] == 0:
            raise DatasetArgumentError(f"{func_name}: X must be nonempty")
        if labels is not None and labels.shape[0] != matrix.shape[0]:
            raise DatasetArgumentError(
                f"{func_name}: {labels.shape[0]} labels for {matrix.shape[0]} rows"
            )
        if labels is not None and role == DatasetRole.TEST and not labels_heldout:
            raise DatasetArgumentError(
                f"{func_name}: test labels must be marked as held out"
            )

        matrix.setflags(write=False)
        if labels is not None:
            labels.setflags(write=False)
        self._X = matrix
        self._y = labels
        self._role = role
        self._labels_heldout = bool(labels_heldout and labels is not None)

    def __len__(self) -> int:
        return self._X.shape[0]

    def __repr__(self) -> str:
        return (
            f"Dataset(n={self.n_rows}, p={self.n_features}, role={self._role},"
            f" labels={self.has_labels})"
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        same_labels = (self._y is None and other._y is None) or (
            self._y is not None
            and other._y is not None
            and np.array_equal(self._y, other._y)
        )
        return (
            self._role == other._role
            and np.array_equal(self._X, other._X)
            and same_labels
        )

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def y(self) -> Optional[np.ndarray]:
        return self._y

    @property
    def role(self) -> DatasetRole:
        return self._role

    @property
    def labels_heldout(self) -> bool:
        return self._labels_heldout

    @property
    def has_labels(self) -> bool:
        return self._y is not None

    @property
    def n_rows(self) -> int:
        return self._X.shape[0]

    @property
    def n_features(self) -> int:
        return self._X.shape[1]

    def require_labels(self, caller: str) -> np.ndarray:
        if self._y is None:
            raise DatasetArgumentError(f"{caller}: dataset has no labels")
        return self._y

    def check_same_features(self, other: Dataset) -> None:
        if self.n_features != other.n_features:
            raise DatasetDimensionError(self._X.shape, other.X.shape)

    def subset(self, indices: Sequence[int]) -> Dataset:
        index_array = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self._X[index_array],
            None if self._y is None else self._y[index_array],
            role=self._role,
            labels_heldout=self._labels_heldout,
        )

    def without_labels(self) -> Dataset:
        return Dataset(self._X, None, role=self._role)

    def as_role(self, role: DatasetRole, labels_heldout: bool = False) -> Dataset:
        return Dataset(self._X, self._y, role=role, labels_heldout=labels_heldout)

    @staticmethod
    def feature_names(n_features: int) -> list:
        return [f"x{j + 1}" for j in range(n_features)]

    @classmethod
    def from_csv(
        cls,
        path: Union[str, Path],
        role: Union[DatasetRole, str] = DatasetRole.TRAIN,
        labels_heldout: bool = False,
    ) -> Dataset:
        """
        Reads a dataset CSV: header row, feature columns x1..xp and an
        optional label column y.

        Raises:
            DatasetFormatError: If the file cannot be parsed or the feature
                columns are not exactly x1..xp.
        """
        func_name = cls.from_csv.__qualname__
        try:
            frame = pd.read_csv(path, encoding="utf-8")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DatasetFormatError(f"{func_name}: {e}") from e

        feature_columns = [c for c in frame.columns if c != LABEL_COLUMN]
        if feature_columns != cls.feature_names(len(feature_columns)):
            raise DatasetFormatError(
                f"{func_name}: feature columns must be x1..xp, got {feature_columns}"
            )
        labels = frame[LABEL_COLUMN].to_numpy() if LABEL_COLUMN in frame.columns else None
        logger.debug("Read %d rows x %d features from %s", len(frame), len(feature_columns), path)
        return cls(
            frame[feature_columns].to_numpy(dtype=np.float64),
            labels,
            role=role,
            labels_heldout=labels_heldout,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self._X, columns=self.feature_names(self.n_features))
        if self._y is not None:
            frame[LABEL_COLUMN] = self._y
        return frame

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, encoding="utf-8")
        logger.info("Wrote %d rows to %s", self.n_rows, path)


def remap_binary_labels(y) -> np.ndarray:
    """
    Maps a two-valued label vector onto {0, 1}.

    {-1, +1} and {2, 4} are mapped with the smaller value to 0; vectors
    already in {0, 1} are returned unchanged.

    Args:
        y: Label vector.

    Returns:
        np.ndarray: float64 labels in {0, 1}.

    Raises:
        DatasetArgumentError: If the labels take more than two values or an
            unsupported pair of values.
    """
    func_name = remap_binary_labels.__name__
    labels = np.asarray(y, dtype=np.float64)
    values = set(np.unique(labels).tolist())
    if values <= {0.0, 1.0}:
        return labels.copy()
    for low, high in ((-1.0, 1.0), (2.0, 4.0)):
        if values <= {low, high}:
            return (labels == high).astype(np.float64)
    raise DatasetArgumentError(
        f"{func_name}: labels are not binary in a supported coding: {sorted(values)}"
    )
