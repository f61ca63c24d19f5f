from __future__ import annotations

import logging
import math
from typing import Dict, Optional, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .constants import KernelFamily
from .dataset import Dataset, DatasetDimensionError
from .utilityfuncs import as_float_matrix

logger = logging.getLogger(__name__)

DataLike = Union[Dataset, np.ndarray]


class KernelError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


class KernelArgumentError(KernelError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Invalid kernel argument: {message}")


class KernelDimensionError(KernelError):
    def __init__(self, first_shape, second_shape) -> None:
        super().__init__(
            f"Cannot evaluate kernel between shapes {first_shape} and {second_shape}"
        )


class KernelSpec:
    def __init__(
        self,
        family: Union[KernelFamily, str],
        bandwidth: Optional[float] = None,
        degree: int = 3,
        offset: float = 1.0,
        feature_bound: Optional[float] = None,
    ) -> None:
        """
        Initializes a kernel specification.

        Gaussian kernels use the non-squared distance k(x, x') =
        exp(-bandwidth * ||x - x'||). Polynomial kernels are
        k(x, x') = (offset + x . x')^degree.

        Args:
            family (Union[KernelFamily, str]): 'gaussian' or 'polynomial'.
            bandwidth (float, optional): sigma > 0, Gaussian only.
            degree (int): Polynomial degree d >= 1.
            offset (float): Polynomial offset c >= 0.
            feature_bound (float, optional): R with ||Phi(x)|| <= R. Fixed to
                1 for Gaussian kernels; for polynomial kernels it is data
                dependent (see feature_bound_for).

        Raises:
            KernelArgumentError: If a hyperparameter is out of range.
        """
        func_name = KernelSpec.__init__.__qualname__
        try:
            family = KernelFamily(family) if isinstance(family, str) else family
        except ValueError as e:
            raise KernelArgumentError(f"{func_name}: unknown family '{family}'") from e

        if family == KernelFamily.GAUSSIAN:
            if bandwidth is None or not bandwidth > 0 or not math.isfinite(bandwidth):
                raise KernelArgumentError(
                    f"{func_name}: Gaussian bandwidth must be > 0, got {bandwidth}"
                )
            if feature_bound is not None and feature_bound != 1.0:
                raise KernelArgumentError(
                    f"{func_name}: Gaussian kernels have feature bound 1, got {feature_bound}"
                )
            feature_bound = 1.0
        else:
            if isinstance(degree, bool) or not isinstance(degree, (int, np.integer)) or degree < 1:
                raise KernelArgumentError(
                    f"{func_name}: polynomial degree must be an integer >= 1, got {degree}"
                )
            if not offset >= 0 or not math.isfinite(offset):
                raise KernelArgumentError(
                    f"{func_name}: polynomial offset must be >= 0, got {offset}"
                )
            if feature_bound is not None and not feature_bound > 0:
                raise KernelArgumentError(
                    f"{func_name}: feature bound must be > 0, got {feature_bound}"
                )

        self._family = family
        self._bandwidth = None if bandwidth is None else float(bandwidth)
        self._degree = int(degree)
        self._offset = float(offset)
        self._feature_bound = None if feature_bound is None else float(feature_bound)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KernelSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.to_dict().items())))

    def __repr__(self) -> str:
        if self._family == KernelFamily.GAUSSIAN:
            return f"KernelSpec('gaussian', bandwidth={self._bandwidth})"
        return f"KernelSpec('polynomial', degree={self._degree}, offset={self._offset})"

    @classmethod
    def gaussian(cls, bandwidth: float) -> KernelSpec:
        return cls(KernelFamily.GAUSSIAN, bandwidth=bandwidth)

    @classmethod
    def polynomial(cls, degree: int = 3, offset: float = 1.0) -> KernelSpec:
        return cls(KernelFamily.POLYNOMIAL, degree=degree, offset=offset)

    @property
    def family(self) -> KernelFamily:
        return self._family

    @property
    def bandwidth(self) -> Optional[float]:
        return self._bandwidth

    @property
    def degree(self) -> int:
        return self._degree

    @property
    def offset(self) -> float:
        return self._offset

    @property
    def feature_bound(self) -> Optional[float]:
        return self._feature_bound

    def diagonal(self, data: DataLike) -> np.ndarray:
        """
        Returns k(x_i, x_i) for every row.
        """
        X = _matrix(data)
        if self._family == KernelFamily.GAUSSIAN:
            return np.ones(X.shape[0])
        return (self._offset + np.einsum("ij,ij->i", X, X)) ** self._degree

    def feature_bound_for(self, data: DataLike) -> float:
        """
        Returns R = max_i k(x_i, x_i)^{1/2} over the data (1 for Gaussian).

        A fixed feature_bound given at construction takes precedence.
        """
        if self._feature_bound is not None:
            return self._feature_bound
        return float(np.sqrt(np.max(self.diagonal(data))))

    def to_dict(self) -> Dict[str, object]:
        return {
            "family": self._family.value,
            "bandwidth": self._bandwidth,
            "degree": self._degree,
            "offset": self._offset,
            "feature_bound": self._feature_bound,
        }

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> KernelSpec:
        family = KernelFamily(values["family"])
        if family == KernelFamily.GAUSSIAN:
            return cls(family, bandwidth=values["bandwidth"])
        return cls(
            family,
            degree=int(values.get("degree", 3)),
            offset=float(values.get("offset", 1.0)),
            feature_bound=values.get("feature_bound"),
        )


def _matrix(data: DataLike) -> np.ndarray:
    func_name = _matrix.__name__
    if isinstance(data, Dataset):
        return data.X
    try:
        X = as_float_matrix(data, "data")
    except ValueError as e:
        raise KernelArgumentError(f"{func_name}: {e}") from e
    if X.shape[0] == 0:
        raise KernelArgumentError(f"{func_name}: data must be nonempty")
    return X


def gram(spec: KernelSpec, A: DataLike) -> np.ndarray:
    """
    Computes the Gram matrix K_ij = k(a_i, a_j).

    The upper triangle is computed and mirrored, so the result is exactly
    symmetric; the diagonal equals k(x, x) of the family.

    Args:
        spec (KernelSpec): Kernel specification.
        A (Union[Dataset, np.ndarray]): Data, rows are observations.

    Returns:
        np.ndarray: An (n, n) symmetric matrix.

    Raises:
        KernelArgumentError: If the data is empty or not finite.
    """
    X = _matrix(A)
    n = X.shape[0]
    if spec.family == KernelFamily.GAUSSIAN:
        distances = squareform(pdist(X, metric="euclidean")) if n > 1 else np.zeros((1, 1))
        K = np.exp(-spec.bandwidth * distances)
        np.fill_diagonal(K, 1.0)
    else:
        inner = X @ X.T
        upper = np.triu(inner)
        inner = upper + np.triu(upper, 1).T
        K = (spec.offset + inner) ** spec.degree
    logger.debug("Gram matrix %s for %d points", spec, n)
    return K


def cross_gram(spec: KernelSpec, A: DataLike, B: DataLike) -> np.ndarray:
    """
    Computes the cross-Gram matrix with entries k(a_i, b_j).

    Raises:
        KernelDimensionError: If A and B have different column counts.
    """
    XA = _matrix(A)
    XB = _matrix(B)
    if XA.shape[1] != XB.shape[1]:
        raise KernelDimensionError(XA.shape, XB.shape)
    if spec.family == KernelFamily.GAUSSIAN:
        return np.exp(-spec.bandwidth * cdist(XA, XB, metric="euclidean"))
    return (spec.offset + XA @ XB.T) ** spec.degree


def kernel_value(spec: KernelSpec, x, x_prime) -> float:
    """
    Evaluates k(x, x') for two single observations.
    """
    a = np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(1, -1)
    b = np.atleast_1d(np.asarray(x_prime, dtype=np.float64)).reshape(1, -1)
    return float(cross_gram(spec, a, b)[0, 0])


def check_same_dimension(first: Dataset, second: Dataset) -> None:
    try:
        first.check_same_features(second)
    except DatasetDimensionError as e:
        raise KernelDimensionError(first.X.shape, second.X.shape) from e
