from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, lu_factor, lu_solve

from .constants import ERM_DEFAULTS, ErmMode, LossType
from .dataset import Dataset
from .estimators import SplitPlan
from .kernels import KernelSpec, cross_gram, gram
from .kmm import ImportanceWeights
from .ridge import Predictor
from .utilityfuncs import as_float_matrix, as_float_vector, check_positive, log_sigmoid, sigmoid

logger = logging.getLogger(__name__)

WeightsLike = Union[ImportanceWeights, np.ndarray]


class ErmError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


class ErmArgumentError(ErmError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Invalid ERM argument: {message}")


class ErmSingularSystemError(ErmError):
    def __init__(self, message: str) -> None:
        super().__init__(
            f"Singular linear system: {message}. Increase lambda to regularize the system"
        )


@dataclass(frozen=True)
class ErmProblem:
    kernel: KernelSpec
    loss: LossType = LossType.SQUARED
    lam: float = 1.0
    mode: ErmMode = ErmMode.ROBUST
    tol: float = ERM_DEFAULTS["logistic_tol"]
    max_iter: int = ERM_DEFAULTS["logistic_max_iter"]

    def __post_init__(self) -> None:
        func_name = "ErmProblem"
        object.__setattr__(self, "loss", LossType(self.loss) if isinstance(self.loss, str) else self.loss)
        object.__setattr__(self, "mode", ErmMode(self.mode) if isinstance(self.mode, str) else self.mode)
        try:
            check_positive(self.lam, "lambda")
            check_positive(self.tol, "tol")
        except ValueError as e:
            raise ErmArgumentError(f"{func_name}: {e}") from e
        if int(self.max_iter) < 1:
            raise ErmArgumentError(f"{func_name}: max_iter must be >= 1")

    def to_dict(self) -> Dict[str, object]:
        return {
            "kernel": self.kernel.to_dict(),
            "loss": self.loss.value,
            "lambda": self.lam,
            "mode": self.mode.value,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }


@dataclass(frozen=True)
class ErmFit:
    """
    Fitted predictor f(x) = sum_i alpha_i k(span_i, x).

    For the logistic loss f is the loss argument of
    y log(1 + e^f) + (1 - y) log(1 + e^{-f}), so P(y = 1 | x) = sigmoid(-f).
    """

    alpha_hat: np.ndarray = field(repr=False)
    span: np.ndarray = field(repr=False)
    objective: float
    grad_norm: float
    loss: LossType
    mode: ErmMode
    kernel: KernelSpec
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0
    objective_trace: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    @property
    def n_span(self) -> int:
        return self.span.shape[0]

    def decision_function(self, X) -> np.ndarray:
        covariates = X.X if isinstance(X, Dataset) else as_float_matrix(X, "X")
        if covariates.shape[1] != self.span.shape[1]:
            raise ErmArgumentError(
                f"predict_erm: fit expects {self.span.shape[1]} features, got {covariates.shape[1]}"
            )
        return cross_gram(self.kernel, covariates, self.span) @ self.alpha_hat

    def to_dict(self) -> Dict[str, object]:
        return {
            "alpha_hat": self.alpha_hat.tolist(),
            "span": self.span.tolist(),
            "objective": self.objective,
            "grad_norm": self.grad_norm,
            "loss": self.loss.value,
            "mode": self.mode.value,
            "kernel": self.kernel.to_dict(),
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> ErmFit:
        return cls(
            alpha_hat=np.asarray(values["alpha_hat"], dtype=np.float64),
            span=as_float_matrix(values["span"], "span"),
            objective=float(values["objective"]),
            grad_norm=float(values["grad_norm"]),
            loss=LossType(values["loss"]),
            mode=ErmMode(values["mode"]),
            kernel=KernelSpec.from_dict(values["kernel"]),
            converged=bool(values.get("converged", True)),
            iterations=int(values.get("iterations", 0)),
            residual=float(values.get("residual", 0.0)),
        )


# Objectives and gradients. The span is ordered train block first (k rows)
# then test block (n_te rows); k = 0 drops the weighted residual term.


def robust_squared_objective(alpha, K_tot, w1, w2, k: int, n_te: int, lam: float) -> float:
    z = K_tot @ alpha
    test_gap = w2[k:] - z[k:]
    value = test_gap @ test_gap / n_te + lam * alpha @ z
    if k:
        value -= 2.0 * (w1 @ z) / k
    return float(value)


def robust_squared_gradient(alpha, K_tot, w1, w2, k: int, n_te: int, lam: float) -> np.ndarray:
    z = K_tot @ alpha
    inner = 2.0 * lam * alpha
    inner[k:] -= 2.0 * (w2[k:] - z[k:]) / n_te
    if k:
        inner -= 2.0 * w1 / k
    return K_tot @ inner


def robust_logistic_objective(alpha, K_tot, w1, g_test, k: int, n_te: int, lam: float) -> float:
    z = K_tot @ alpha
    z_test = z[k:]
    value = np.sum(g_test * z_test - log_sigmoid(z_test)) / n_te + lam * alpha @ z
    if k:
        value += (w1 @ z) / k
    return float(value)


def robust_logistic_gradient(alpha, K_tot, w1, g_test, k: int, n_te: int, lam: float) -> np.ndarray:
    z = K_tot @ alpha
    inner = 2.0 * lam * alpha
    inner[k:] += (g_test - sigmoid(-z[k:])) / n_te
    if k:
        inner += w1 / k
    return K_tot @ inner


def kmm_squared_objective(alpha, K, beta, y, n_te: int, lam: float) -> float:
    z = K @ alpha
    return float(np.sum(beta * (y - z) ** 2) / n_te + lam * alpha @ z)


def kmm_squared_gradient(alpha, K, beta, y, n_te: int, lam: float) -> np.ndarray:
    z = K @ alpha
    return K @ (-2.0 * beta * (y - z) / n_te + 2.0 * lam * alpha)


def kmm_logistic_objective(alpha, K, beta, y, lam: float) -> float:
    z = K @ alpha
    losses = -y * log_sigmoid(-z) - (1.0 - y) * log_sigmoid(z)
    return float(np.sum(beta * losses) / y.shape[0] + lam * alpha @ z)


def kmm_logistic_gradient(alpha, K, beta, y, lam: float) -> np.ndarray:
    z = K @ alpha
    return K @ (beta * (y - sigmoid(-z)) / y.shape[0] + 2.0 * lam * alpha)


def _minimize_smooth(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    caller: str,
) -> Tuple[np.ndarray, float, float, int, bool, np.ndarray]:
    """
    Gradient descent with Armijo backtracking and Barzilai-Borwein trial
    steps. Every accepted step decreases the objective.
    """
    armijo_c = ERM_DEFAULTS["armijo_c"]
    shrink = ERM_DEFAULTS["armijo_shrink"]
    x = x0.copy()
    f = objective(x)
    g = gradient(x)
    trace = [f]
    step = 1.0 / max(1.0, float(np.linalg.norm(g)))
    converged = False
    iterations = 0
    for iterations in range(max_iter + 1):
        g_norm_sq = float(g @ g)
        if np.sqrt(g_norm_sq) <= tol:
            converged = True
            break
        if iterations == max_iter:
            break
        t = step
        while True:
            x_new = x - t * g
            f_new = objective(x_new)
            if f_new <= f - armijo_c * t * g_norm_sq:
                break
            t *= shrink
            if t < 1e-20:
                break
        if t < 1e-20:
            logger.warning("%s: line search stalled at gradient norm %.3e", caller, np.sqrt(g_norm_sq))
            break
        g_new = gradient(x_new)
        s = x_new - x
        dg = g_new - g
        curvature = float(s @ dg)
        step = float(s @ s) / curvature if curvature > 0 else 2.0 * t
        x, f, g = x_new, f_new, g_new
        trace.append(f)

    grad_norm = float(np.linalg.norm(g))
    if not converged:
        logger.warning(
            "%s: gradient norm %.3e above tol %.1e after %d iterations", caller, grad_norm, tol, iterations
        )
    return x, f, grad_norm, iterations, converged, np.asarray(trace)


def _solve_general(A: np.ndarray, b: np.ndarray, caller: str) -> Tuple[np.ndarray, float]:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            factor = lu_factor(A, check_finite=True)
            solution = lu_solve(factor, b)
    except (LinAlgError, LinAlgWarning, ValueError) as e:
        raise ErmSingularSystemError(f"{caller}: {e}") from e
    if not np.all(np.isfinite(solution)):
        raise ErmSingularSystemError(f"{caller}: solution is not finite")
    residual = float(np.linalg.norm(A @ solution - b))
    if residual > ERM_DEFAULTS["solve_residual_tol"] * max(1.0, float(np.linalg.norm(b))):
        logger.warning("%s: linear-solve residual %.3e", caller, residual)
    return solution, residual


def _beta(weights: WeightsLike, n: int, caller: str) -> np.ndarray:
    beta = weights.beta if isinstance(weights, ImportanceWeights) else as_float_vector(weights, "weights")
    if beta.shape[0] != n:
        raise ErmArgumentError(f"{caller}: {beta.shape[0]} weights for {n} training rows")
    return beta


def _check_lambda(lam: float, caller: str) -> float:
    try:
        return check_positive(lam, "lambda")
    except ValueError as e:
        raise ErmArgumentError(f"{caller}: {e}") from e


def robust_blocks(
    train_kmm: Dataset, test: Dataset, weights: WeightsLike, g_hat: Predictor, kernel: KernelSpec
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Assembles the stacked span and the vectors of the robust ERM.

    Returns:
        (X_tot, K_tot, w1, w2): span covariates (train block then test
        block), their Gram matrix, w1 = beta (y - g_hat) on the train block
        and 0 on the test block, and w2 = g_hat on the test block and 0 on
        the train block. The test-block indicator w3 is implied by the
        block layout.
    """
    func_name = robust_blocks.__name__
    if train_kmm.n_features != test.n_features:
        raise ErmArgumentError(
            f"{func_name}: train has {train_kmm.n_features} features, test has {test.n_features}"
        )
    y = train_kmm.require_labels(func_name)
    k = train_kmm.n_rows
    beta = _beta(weights, k, func_name)
    X_tot = np.vstack([train_kmm.X, test.X])
    K_tot = gram(kernel, X_tot)
    w1 = np.concatenate([beta * (y - g_hat.predict(train_kmm)), np.zeros(test.n_rows)])
    w2 = np.concatenate([np.zeros(k), g_hat.predict(test)])
    return X_tot, K_tot, w1, w2


def fit_robust_least_squares(
    train_kmm: Dataset,
    test: Dataset,
    weights: WeightsLike,
    g_hat: Predictor,
    lam: float,
    kernel: KernelSpec,
) -> ErmFit:
    """
    Penalized least squares with the control-variate corrected risk.

    The minimizer over the train-and-test span solves

        (W3 K_tot + lam n_te I) alpha = (n_te / k) w1 + w2,

    a non-symmetric system solved by LU with partial pivoting.

    Args:
        train_kmm (Dataset): Labelled KMM rows of the training data.
        test (Dataset): Test covariates.
        weights: Importance weights for train_kmm.
        g_hat (Predictor): Regression estimate.
        lam (float): Ridge penalty on ||theta||_H^2, > 0.
        kernel (KernelSpec): Kernel of the hypothesis space.

    Returns:
        ErmFit: Coefficients over k + n_te span points.

    Raises:
        ErmSingularSystemError: If the system is numerically singular.
    """
    func_name = fit_robust_least_squares.__name__
    lam = _check_lambda(lam, func_name)
    X_tot, K_tot, w1, w2 = robust_blocks(train_kmm, test, weights, g_hat, kernel)
    k, n_te = train_kmm.n_rows, test.n_rows
    w3 = np.concatenate([np.zeros(k), np.ones(n_te)])

    A = w3[:, None] * K_tot + lam * n_te * np.eye(k + n_te)
    b = (n_te / k) * w1 + w2
    alpha, residual = _solve_general(A, b, func_name)
    gradient = robust_squared_gradient(alpha, K_tot, w1, w2, k, n_te, lam)
    logger.debug("%s: span=%d residual=%.3e", func_name, k + n_te, residual)
    return ErmFit(
        alpha_hat=alpha,
        span=X_tot,
        objective=robust_squared_objective(alpha, K_tot, w1, w2, k, n_te, lam),
        grad_norm=float(np.linalg.norm(gradient)),
        loss=LossType.SQUARED,
        mode=ErmMode.ROBUST,
        kernel=kernel,
        residual=residual,
    )


def _clipped(values: np.ndarray) -> np.ndarray:
    clip = ERM_DEFAULTS["g_hat_clip"]
    return np.clip(values, clip, 1.0 - clip)


def fit_robust_logistic(
    train_kmm: Dataset,
    test: Dataset,
    weights: WeightsLike,
    g_hat: Predictor,
    lam: float,
    kernel: KernelSpec,
    tol: float = ERM_DEFAULTS["logistic_tol"],
    max_iter: int = ERM_DEFAULTS["logistic_max_iter"],
) -> ErmFit:
    """
    Penalized logistic regression with the control-variate corrected risk:

        w1^T K_tot alpha / k
        + (1/n_te) sum_test [g_hat z_i - log sigmoid(z_i)]
        + lam alpha^T K_tot alpha,    z = K_tot alpha.

    g_hat is clipped to [1e-6, 1 - 1e-6] on the test block.
    """
    func_name = fit_robust_logistic.__name__
    lam = _check_lambda(lam, func_name)
    X_tot, K_tot, w1, w2 = robust_blocks(train_kmm, test, weights, g_hat, kernel)
    k, n_te = train_kmm.n_rows, test.n_rows
    g_test = _clipped(w2[k:])

    alpha, value, grad_norm, iterations, converged, trace = _minimize_smooth(
        lambda a: robust_logistic_objective(a, K_tot, w1, g_test, k, n_te, lam),
        lambda a: robust_logistic_gradient(a, K_tot, w1, g_test, k, n_te, lam),
        np.zeros(k + n_te),
        tol,
        int(max_iter),
        func_name,
    )
    return ErmFit(alpha, X_tot, value, grad_norm, LossType.LOGISTIC, ErmMode.ROBUST, kernel,
                  converged, iterations, 0.0, trace)


def fit_kmm_weighted_ridge(
    train: Dataset, weights: WeightsLike, lam: float, kernel: KernelSpec, n_te: int
) -> ErmFit:
    """
    Importance-weighted kernel ridge over the training span:
    alpha = (diag(beta) K + n_te lam I)^{-1} diag(beta) y.
    """
    func_name = fit_kmm_weighted_ridge.__name__
    lam = _check_lambda(lam, func_name)
    if n_te < 1:
        raise ErmArgumentError(f"{func_name}: n_te must be >= 1, got {n_te}")
    y = train.require_labels(func_name)
    beta = _beta(weights, train.n_rows, func_name)
    K = gram(kernel, train)

    A = beta[:, None] * K + n_te * lam * np.eye(train.n_rows)
    alpha, residual = _solve_general(A, beta * y, func_name)
    return ErmFit(
        alpha_hat=alpha,
        span=train.X.copy(),
        objective=kmm_squared_objective(alpha, K, beta, y, n_te, lam),
        grad_norm=float(np.linalg.norm(kmm_squared_gradient(alpha, K, beta, y, n_te, lam))),
        loss=LossType.SQUARED,
        mode=ErmMode.KMM_WEIGHTED,
        kernel=kernel,
        residual=residual,
    )


def fit_kmm_weighted_logistic(
    train: Dataset,
    weights: WeightsLike,
    lam: float,
    kernel: KernelSpec,
    tol: float = ERM_DEFAULTS["logistic_tol"],
    max_iter: int = ERM_DEFAULTS["logistic_max_iter"],
) -> ErmFit:
    """
    Importance-weighted penalized logistic regression over the training
    span: (1/n_tr) sum_j beta_j loss(y_j, f_j) + lam alpha^T K alpha.
    """
    func_name = fit_kmm_weighted_logistic.__name__
    lam = _check_lambda(lam, func_name)
    y = train.require_labels(func_name)
    beta = _beta(weights, train.n_rows, func_name)
    K = gram(kernel, train)

    alpha, value, grad_norm, iterations, converged, trace = _minimize_smooth(
        lambda a: kmm_logistic_objective(a, K, beta, y, lam),
        lambda a: kmm_logistic_gradient(a, K, beta, y, lam),
        np.zeros(train.n_rows),
        tol,
        int(max_iter),
        func_name,
    )
    return ErmFit(alpha, train.X.copy(), value, grad_norm, LossType.LOGISTIC, ErmMode.KMM_WEIGHTED,
                  kernel, converged, iterations, 0.0, trace)


def fit_unweighted_nr_erm(
    test: Dataset,
    g_hat: Predictor,
    lam: float,
    kernel: KernelSpec,
    loss: LossType = LossType.SQUARED,
    tol: float = ERM_DEFAULTS["logistic_tol"],
    max_iter: int = ERM_DEFAULTS["logistic_max_iter"],
) -> ErmFit:
    """
    Plug-in risk (1/n_te) sum_i l_hat(x_i'; theta) + lam ||theta||_H^2 over
    the test span, with g_hat in place of the unknown labels.
    """
    func_name = fit_unweighted_nr_erm.__name__
    lam = _check_lambda(lam, func_name)
    loss = LossType(loss) if isinstance(loss, str) else loss
    n_te = test.n_rows
    K = gram(kernel, test)
    g_test = g_hat.predict(test)
    empty = np.zeros(0)

    if loss == LossType.SQUARED:
        alpha, residual = _solve_general(K + lam * n_te * np.eye(n_te), g_test, func_name)
        gradient = robust_squared_gradient(alpha, K, empty, g_test, 0, n_te, lam)
        return ErmFit(
            alpha_hat=alpha,
            span=test.X.copy(),
            objective=robust_squared_objective(alpha, K, empty, g_test, 0, n_te, lam),
            grad_norm=float(np.linalg.norm(gradient)),
            loss=loss,
            mode=ErmMode.UNWEIGHTED_NR,
            kernel=kernel,
            residual=residual,
        )

    g_test = _clipped(g_test)
    alpha, value, grad_norm, iterations, converged, trace = _minimize_smooth(
        lambda a: robust_logistic_objective(a, K, empty, g_test, 0, n_te, lam),
        lambda a: robust_logistic_gradient(a, K, empty, g_test, 0, n_te, lam),
        np.zeros(n_te),
        tol,
        int(max_iter),
        func_name,
    )
    return ErmFit(alpha, test.X.copy(), value, grad_norm, loss, ErmMode.UNWEIGHTED_NR, kernel,
                  converged, iterations, 0.0, trace)


def fit_erm(
    problem: ErmProblem,
    train: Dataset,
    test: Dataset,
    plan: SplitPlan,
    weights: Optional[WeightsLike],
    g_hat: Predictor,
) -> ErmFit:
    """
    Dispatches on problem.mode and problem.loss. weights cover the KMM rows
    of plan and are ignored in unweighted mode.
    """
    func_name = fit_erm.__name__
    if problem.mode != ErmMode.UNWEIGHTED_NR and weights is None:
        raise ErmArgumentError(f"{func_name}: mode '{problem.mode}' needs importance weights")
    kmm_part = train.subset(plan.kmm_indices)
    if problem.mode == ErmMode.ROBUST:
        if problem.loss == LossType.SQUARED:
            return fit_robust_least_squares(kmm_part, test, weights, g_hat, problem.lam, problem.kernel)
        return fit_robust_logistic(
            kmm_part, test, weights, g_hat, problem.lam, problem.kernel, problem.tol, problem.max_iter
        )
    if problem.mode == ErmMode.KMM_WEIGHTED:
        if problem.loss == LossType.SQUARED:
            return fit_kmm_weighted_ridge(kmm_part, weights, problem.lam, problem.kernel, test.n_rows)
        return fit_kmm_weighted_logistic(
            kmm_part, weights, problem.lam, problem.kernel, problem.tol, problem.max_iter
        )
    return fit_unweighted_nr_erm(
        test, g_hat, problem.lam, problem.kernel, problem.loss, problem.tol, problem.max_iter
    )


def predict_erm(fit: ErmFit, X) -> np.ndarray:
    """
    Evaluates f(x) = sum_i alpha_i k(span_i, x) at every row of X.
    """
    return fit.decision_function(X)


def predict_proba_erm(fit: ErmFit, X) -> np.ndarray:
    """
    P(y = 1 | x) for logistic fits; the clipped regression value for squared
    fits.
    """
    values = fit.decision_function(X)
    if fit.loss == LossType.LOGISTIC:
        return sigmoid(-values)
    return np.clip(values, 0.0, 1.0)


def classify_erm(fit: ErmFit, X, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba_erm(fit, X) >= threshold).astype(np.int64)


def misclassification_rate(fit: ErmFit, test: Dataset, threshold: float = 0.5) -> float:
    """
    Misclassification rate against the held-out test labels.
    """
    labels = test.require_labels(misclassification_rate.__name__)
    return float(np.mean(classify_erm(fit, test, threshold) != labels))


# Slope-only fits (intercept known to be 0, no penalty) on scalar covariates.


def _scalar_column(data: Dataset, caller: str) -> np.ndarray:
    if data.n_features != 1:
        raise ErmArgumentError(f"{caller}: slope fits need one feature, got {data.n_features}")
    return data.X[:, 0]


def fit_ols_slope(train: Dataset) -> float:
    func_name = fit_ols_slope.__name__
    x = _scalar_column(train, func_name)
    y = train.require_labels(func_name)
    return float(np.sum(x * y) / np.sum(x * x))


def fit_weighted_slope(train: Dataset, weights: WeightsLike) -> float:
    func_name = fit_weighted_slope.__name__
    x = _scalar_column(train, func_name)
    y = train.require_labels(func_name)
    beta = _beta(weights, train.n_rows, func_name)
    return float(np.sum(beta * x * y) / np.sum(beta * x * x))


def fit_robust_slope(train_kmm: Dataset, test: Dataset, weights: WeightsLike, g_hat: Predictor) -> float:
    """
    Minimizer over s of the corrected squared risk of y = s x:

        s = [(1/k) sum beta x (y - g_hat) + (1/n_te) sum g_hat(x') x'] / [(1/n_te) sum x'^2]
    """
    func_name = fit_robust_slope.__name__
    x = _scalar_column(train_kmm, func_name)
    x_test = _scalar_column(test, func_name)
    y = train_kmm.require_labels(func_name)
    beta = _beta(weights, train_kmm.n_rows, func_name)
    k, n_te = train_kmm.n_rows, test.n_rows
    correction = np.sum(beta * x * (y - g_hat.predict(train_kmm))) / k
    plug_in = np.sum(g_hat.predict(test) * x_test) / n_te
    return float((correction + plug_in) / (np.sum(x_test * x_test) / n_te))
