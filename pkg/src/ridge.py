from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Protocol, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import Lasso, LinearRegression

from .constants import GammaRule, GHatKind
from .dataset import Dataset
from .kernels import KernelError, KernelSpec, cross_gram, gram
from .utilityfuncs import as_float_matrix, as_float_vector, check_positive

logger = logging.getLogger(__name__)

DataLike = Union[Dataset, np.ndarray]

LASSO_TOL = 1e-10
LASSO_MAX_ITER = 100_000


class RidgeError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


class RidgeArgumentError(RidgeError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Invalid regression argument: {message}")


class RidgeDimensionError(RidgeError):
    def __init__(self, expected: int, got: int) -> None:
        super().__init__(f"Predictor expects {expected} features, got {got}")


class RidgeNumericalError(RidgeError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Numerical failure: {message}")


class Predictor(Protocol):
    def predict(self, X: DataLike) -> np.ndarray:
        ...


def _covariates(X: DataLike) -> np.ndarray:
    if isinstance(X, Dataset):
        return X.X
    try:
        return as_float_matrix(X, "X")
    except ValueError as e:
        raise RidgeArgumentError(f"predict: {e}") from e


class KernelRidgeModel:
    def __init__(self, alpha, anchors, gamma: float, kernel: KernelSpec) -> None:
        """
        Initializes a fitted kernel ridge predictor
        g(x) = sum_j alpha_j k(anchor_j, x).

        Args:
            alpha: Representer coefficients, one per anchor.
            anchors: Anchor covariates (m, p).
            gamma (float): Ridge parameter the model was fitted with.
            kernel (KernelSpec): Kernel of the expansion.

        Raises:
            RidgeArgumentError: If gamma <= 0 or alpha and anchors disagree.
        """
        func_name = KernelRidgeModel.__init__.__qualname__
        try:
            alpha_vec = as_float_vector(alpha, "alpha")
            anchor_mat = as_float_matrix(anchors, "anchors")
            check_positive(gamma, "gamma")
        except ValueError as e:
            raise RidgeArgumentError(f"{func_name}: {e}") from e
        if alpha_vec.shape[0] != anchor_mat.shape[0]:
            raise RidgeArgumentError(
                f"{func_name}: {alpha_vec.shape[0]} coefficients for {anchor_mat.shape[0]} anchors"
            )
        alpha_vec.setflags(write=False)
        anchor_mat.setflags(write=False)
        self._alpha = alpha_vec
        self._anchors = anchor_mat
        self._gamma = float(gamma)
        self._kernel = kernel

    def __repr__(self) -> str:
        return f"KernelRidgeModel(m={self._alpha.shape[0]}, gamma={self._gamma}, kernel={self._kernel})"

    @property
    def alpha(self) -> np.ndarray:
        return self._alpha

    @property
    def anchors(self) -> np.ndarray:
        return self._anchors

    @property
    def gamma(self) -> float:
        return self._gamma

    @property
    def kernel(self) -> KernelSpec:
        return self._kernel

    def predict(self, X: DataLike) -> np.ndarray:
        covariates = _covariates(X)
        if covariates.shape[1] != self._anchors.shape[1]:
            raise RidgeDimensionError(self._anchors.shape[1], covariates.shape[1])
        return cross_gram(self._kernel, covariates, self._anchors) @ self._alpha

    def rkhs_norm_sq(self) -> float:
        """
        ||g||_H^2 = alpha^T K alpha over the anchors.
        """
        return float(self._alpha @ gram(self._kernel, self._anchors) @ self._alpha)

    def to_dict(self) -> Dict[str, object]:
        return {
            "gamma": self._gamma,
            "alpha": self._alpha.tolist(),
            "anchors": self._anchors.tolist(),
            "kernel": self._kernel.to_dict(),
        }

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> KernelRidgeModel:
        func_name = cls.from_dict.__qualname__
        try:
            return cls(
                values["alpha"],
                values["anchors"],
                values["gamma"],
                KernelSpec.from_dict(values["kernel"]),
            )
        except (KeyError, TypeError) as e:
            raise RidgeArgumentError(f"{func_name}: malformed model record ({e})") from e


class LinearModel:
    def __init__(self, coef, intercept: float = 0.0) -> None:
        self._coef = as_float_vector(coef, "coef")
        self._intercept = float(intercept)

    def __repr__(self) -> str:
        return f"LinearModel(coef={self._coef.tolist()}, intercept={self._intercept})"

    @property
    def coef(self) -> np.ndarray:
        return self._coef

    @property
    def intercept(self) -> float:
        return self._intercept

    def predict(self, X: DataLike) -> np.ndarray:
        covariates = _covariates(X)
        if covariates.shape[1] != self._coef.shape[0]:
            raise RidgeDimensionError(self._coef.shape[0], covariates.shape[1])
        return covariates @ self._coef + self._intercept

    def to_dict(self) -> Dict[str, object]:
        return {"coef": self._coef.tolist(), "intercept": self._intercept}


class ConstantPredictor:
    def __init__(self, value: float) -> None:
        self._value = float(value)

    def __repr__(self) -> str:
        return f"ConstantPredictor({self._value})"

    @property
    def value(self) -> float:
        return self._value

    def predict(self, X: DataLike) -> np.ndarray:
        return np.full(_covariates(X).shape[0], self._value)


class FunctionPredictor:
    """
    Wraps an analytic function of the covariate matrix, e.g. the true
    regression function of a simulation.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "function") -> None:
        self._fn = fn
        self._name = name

    def __repr__(self) -> str:
        return f"FunctionPredictor({self._name})"

    def predict(self, X: DataLike) -> np.ndarray:
        covariates = _covariates(X)
        values = np.asarray(self._fn(covariates), dtype=np.float64).reshape(-1)
        if values.shape[0] != covariates.shape[0]:
            raise RidgeNumericalError(
                f"{self._name} returned {values.shape[0]} values for {covariates.shape[0]} rows"
            )
        return values


@dataclass(frozen=True)
class GammaSchedule:
    rule: GammaRule = GammaRule.INVERSE_NTR
    theta: float = 1.0
    fixed_value: Optional[float] = None

    def __post_init__(self) -> None:
        func_name = "GammaSchedule"
        rule = GammaRule(self.rule) if isinstance(self.rule, str) else self.rule
        object.__setattr__(self, "rule", rule)
        try:
            if rule == GammaRule.THETA_OPTIMAL:
                check_positive(self.theta, "theta")
            if rule == GammaRule.FIXED:
                if self.fixed_value is None:
                    raise ValueError("fixed rule needs a fixed_value")
                check_positive(self.fixed_value, "fixed_value")
        except ValueError as e:
            raise RidgeArgumentError(f"{func_name}: {e}") from e

    def to_dict(self) -> Dict[str, object]:
        return {"rule": self.rule.value, "theta": self.theta, "fixed_value": self.fixed_value}


def schedule_gamma(s: GammaSchedule, n_tr: int, n_te: int) -> float:
    """
    Maps sample sizes to the ridge parameter.

    theta: n^{-(theta + 2) / (theta + 1)} with n = min(n_tr, n_te);
    n: 1 / min(n_tr, n_te); ntr: 1 / n_tr; fixed: the fixed value.
    """
    func_name = schedule_gamma.__name__
    if n_tr < 1 or n_te < 1:
        raise RidgeArgumentError(f"{func_name}: sample sizes must be >= 1, got {n_tr}, {n_te}")
    n = min(n_tr, n_te)
    if s.rule == GammaRule.THETA_OPTIMAL:
        gamma = float(n) ** (-(s.theta + 2.0) / (s.theta + 1.0))
    elif s.rule == GammaRule.INVERSE_N:
        gamma = 1.0 / n
    elif s.rule == GammaRule.INVERSE_NTR:
        gamma = 1.0 / n_tr
    else:
        gamma = float(s.fixed_value)
    logger.debug("%s: rule=%s n_tr=%d n_te=%d gamma=%.6g", func_name, s.rule, n_tr, n_te, gamma)
    return gamma


def fit_kernel_ridge(train: Dataset, gamma: float, kernel: KernelSpec) -> KernelRidgeModel:
    """
    Fits regularized least squares in the RKHS,

        min_g (1/m) sum_j (y_j - g(x_j))^2 + gamma ||g||_H^2,

    whose representer coefficients solve (K + m gamma I) alpha = y. The
    system is symmetric positive definite for gamma > 0 and is solved by
    Cholesky factorization.

    Args:
        train (Dataset): Labelled training data.
        gamma (float): Ridge parameter, > 0.
        kernel (KernelSpec): Kernel.

    Returns:
        KernelRidgeModel: The fitted model anchored at the training points.

    Raises:
        RidgeArgumentError: If gamma <= 0 or the data has no labels.
        RidgeNumericalError: If the factorization fails.
    """
    func_name = fit_kernel_ridge.__name__
    try:
        check_positive(gamma, "gamma")
    except ValueError as e:
        raise RidgeArgumentError(f"{func_name}: {e}") from e
    if not train.has_labels:
        raise RidgeArgumentError(f"{func_name}: training data has no labels")
    y = train.y
    m = train.n_rows
    try:
        K = gram(kernel, train)
    except KernelError as e:
        raise RidgeArgumentError(f"{func_name}: {e.message}") from e

    system = K + m * gamma * np.eye(m)
    try:
        factor = cho_factor(system, lower=True, check_finite=True)
        alpha = cho_solve(factor, y)
    except (LinAlgError, ValueError) as e:
        raise RidgeNumericalError(f"{func_name}: {e}") from e

    residual = float(np.linalg.norm(system @ alpha - y))
    if residual > 1e-8 * max(1.0, float(np.linalg.norm(y))):
        logger.warning("%s: linear-solve residual %.3e", func_name, residual)
    logger.debug("%s: m=%d gamma=%.6g residual=%.3e", func_name, m, gamma, residual)
    return KernelRidgeModel(alpha, train.X, gamma, kernel)


def predict(model: Predictor, X: DataLike) -> np.ndarray:
    return model.predict(X)


def fit_lasso_linear(train: Dataset, lam: float) -> LinearModel:
    """
    Fits a linear model with unpenalized intercept by minimizing

        (1/m) ||y - X w - b||^2 + lam ||w||_1

    with coordinate descent. lam = 0 is delegated to ordinary least squares.

    Args:
        train (Dataset): Labelled training data.
        lam (float): L1 penalty, >= 0.

    Returns:
        LinearModel: Coefficients and intercept.

    Raises:
        RidgeArgumentError: If lam < 0 or the data has no labels.
    """
    func_name = fit_lasso_linear.__name__
    try:
        lam = check_positive(lam, "lambda", allow_zero=True)
    except ValueError as e:
        raise RidgeArgumentError(f"{func_name}: {e}") from e
    if not train.has_labels:
        raise RidgeArgumentError(f"{func_name}: training data has no labels")

    if lam == 0.0:
        logger.warning("%s: lambda = 0, fitting ordinary least squares", func_name)
        estimator = LinearRegression(fit_intercept=True)
    else:
        # sklearn scales the squared loss by 1/(2m)
        estimator = Lasso(
            alpha=lam / 2.0,
            fit_intercept=True,
            tol=LASSO_TOL,
            max_iter=LASSO_MAX_ITER,
            selection="cyclic",
        )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        estimator.fit(train.X, train.y)
    for warning in caught:
        if issubclass(warning.category, ConvergenceWarning):
            logger.warning("%s: %s", func_name, warning.message)
    return LinearModel(np.asarray(estimator.coef_, dtype=np.float64).reshape(-1), float(estimator.intercept_))


@dataclass(frozen=True)
class GHatFitter:
    """
    Recipe for the regression estimate g_hat: kernel ridge with a gamma
    schedule, or a lasso-penalized linear fit.
    """

    kind: GHatKind = GHatKind.KERNEL_RIDGE
    kernel: Optional[KernelSpec] = None
    schedule: GammaSchedule = GammaSchedule()
    lasso_lambda: float = 0.1

    def __post_init__(self) -> None:
        kind = GHatKind(self.kind) if isinstance(self.kind, str) else self.kind
        object.__setattr__(self, "kind", kind)
        if kind == GHatKind.KERNEL_RIDGE and self.kernel is None:
            raise RidgeArgumentError("GHatFitter: kernel ridge needs a kernel")

    @classmethod
    def kernel_ridge(cls, kernel: KernelSpec, schedule: Optional[GammaSchedule] = None) -> GHatFitter:
        return cls(GHatKind.KERNEL_RIDGE, kernel, schedule or GammaSchedule())

    @classmethod
    def lasso(cls, lam: float) -> GHatFitter:
        return cls(GHatKind.LASSO_LINEAR, None, GammaSchedule(), lam)

    def gamma_for(self, n_tr: int, n_te: int) -> Optional[float]:
        if self.kind != GHatKind.KERNEL_RIDGE:
            return None
        return schedule_gamma(self.schedule, n_tr, n_te)

    def fit(self, train: Dataset, n_te: int) -> Predictor:
        if self.kind == GHatKind.LASSO_LINEAR:
            return fit_lasso_linear(train, self.lasso_lambda)
        return fit_kernel_ridge(train, self.gamma_for(train.n_rows, n_te), self.kernel)

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "kernel": None if self.kernel is None else self.kernel.to_dict(),
            "schedule": self.schedule.to_dict(),
            "lasso_lambda": self.lasso_lambda,
        }
