from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from .constants import KMM_DEFAULTS, QP_DEFAULTS
from .dataset import Dataset
from .kernels import KernelSpec, cross_gram, gram
from .qp import BoxBandQp, QpError, solve_qp
from .utilityfuncs import as_float_vector, check_positive

logger = logging.getLogger(__name__)


class KmmError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


class KmmArgumentError(KmmError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Invalid KMM argument: {message}")


class KmmDimensionError(KmmError):
    def __init__(self, train_shape, test_shape) -> None:
        super().__init__(
            f"Train and test covariates differ in dimension: {train_shape} vs {test_shape}"
        )


class KmmConvergenceError(KmmError):
    def __init__(self, iterations: int, residual: float) -> None:
        super().__init__(
            f"KMM weights did not converge after {iterations} iterations"
            f" (KKT residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


def default_epsilon(n_tr: int) -> float:
    """
    Mean-tolerance default (sqrt(n_tr) - 1) / sqrt(n_tr).
    """
    root = math.sqrt(n_tr)
    return (root - 1.0) / root


@dataclass(frozen=True)
class KmmConfig:
    """
    Settings of the weight-estimation problem.

    epsilon=None selects default_epsilon(n_tr) at solve time; an explicit
    value (including 0) overrides it.
    """

    kernel: KernelSpec
    B: float = KMM_DEFAULTS["B"]
    epsilon: Optional[float] = None
    include_band: bool = KMM_DEFAULTS["include_band"]
    tol: float = QP_DEFAULTS["tol"]
    max_iter: int = QP_DEFAULTS["max_iter"]
    require_convergence: bool = False

    def __post_init__(self) -> None:
        func_name = "KmmConfig"
        if not isinstance(self.kernel, KernelSpec):
            raise KmmArgumentError(f"{func_name}: kernel must be a KernelSpec")
        try:
            check_positive(self.B, "B")
            if self.epsilon is not None:
                check_positive(self.epsilon, "epsilon", allow_zero=True)
            check_positive(self.tol, "tol")
        except ValueError as e:
            raise KmmArgumentError(f"{func_name}: {e}") from e
        if int(self.max_iter) < 1:
            raise KmmArgumentError(f"{func_name}: max_iter must be >= 1")

    def epsilon_for(self, n_tr: int) -> float:
        return default_epsilon(n_tr) if self.epsilon is None else float(self.epsilon)

    def to_dict(self) -> Dict[str, object]:
        return {
            "kernel": self.kernel.to_dict(),
            "B": self.B,
            "epsilon": self.epsilon,
            "include_band": self.include_band,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "require_convergence": self.require_convergence,
        }


@dataclass(frozen=True)
class ImportanceWeights:
    beta: np.ndarray = field(repr=False)
    l_hat: float
    kkt_residual: float
    mean_beta: float
    converged: bool = True
    iterations: int = 0
    epsilon: float = 0.0
    B: float = KMM_DEFAULTS["B"]
    band_active: bool = True

    @property
    def n(self) -> int:
        return self.beta.shape[0]

    def diagnostics(self) -> Dict[str, object]:
        return {
            "l_hat": self.l_hat,
            "kkt_residual": self.kkt_residual,
            "mean_beta": self.mean_beta,
            "converged": self.converged,
            "iterations": self.iterations,
            "epsilon": self.epsilon,
            "B": self.B,
            "band_active": self.band_active,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"beta": self.beta})

    @classmethod
    def from_vector(cls, beta, l_hat: float = float("nan")) -> ImportanceWeights:
        """
        Wraps externally supplied weights (e.g. the true density ratio).
        """
        values = as_float_vector(beta, "beta")
        return cls(
            beta=values,
            l_hat=l_hat,
            kkt_residual=0.0,
            mean_beta=float(values.mean()),
            converged=True,
            iterations=0,
            epsilon=float("nan"),
            B=float(values.max()) if values.size else 0.0,
            band_active=False,
        )


def _check_pair(train: Dataset, test: Dataset) -> None:
    if train.n_features != test.n_features:
        raise KmmDimensionError(train.X.shape, test.X.shape)


def _l_hat_from_parts(
    beta: np.ndarray, K: np.ndarray, kappa: np.ndarray, test_total: float, n_te: int
) -> float:
    n_tr = beta.shape[0]
    value = (beta @ (K @ beta) - 2.0 * kappa @ beta) / n_tr**2 + test_total / n_te**2
    # rounding can push an exact zero slightly negative
    return max(float(value), 0.0)


def kmm_l_hat(train: Dataset, test: Dataset, beta, kernel: KernelSpec) -> float:
    """
    Squared RKHS distance between the beta-weighted training mean and the
    test mean, for any weight vector.

    Args:
        train (Dataset): Training covariates.
        test (Dataset): Test covariates.
        beta: Weights, one per training row.
        kernel (KernelSpec): Kernel defining the RKHS.

    Returns:
        float: || (1/n_tr) sum beta_j Phi(x_j) - (1/n_te) sum Phi(x_i') ||^2.

    Raises:
        KmmDimensionError: If the covariate dimensions differ.
        KmmArgumentError: If beta has the wrong length.
    """
    func_name = kmm_l_hat.__name__
    _check_pair(train, test)
    try:
        weights = as_float_vector(beta, "beta")
    except ValueError as e:
        raise KmmArgumentError(f"{func_name}: {e}") from e
    if weights.shape[0] != train.n_rows:
        raise KmmArgumentError(
            f"{func_name}: {weights.shape[0]} weights for {train.n_rows} training rows"
        )
    K = gram(kernel, train)
    kappa = (train.n_rows / test.n_rows) * cross_gram(kernel, train, test).sum(axis=1)
    test_total = float(gram(kernel, test).sum())
    return _l_hat_from_parts(weights, K, kappa, test_total, test.n_rows)


def kmm_weights(train: Dataset, test: Dataset, cfg: KmmConfig) -> ImportanceWeights:
    """
    Estimates importance weights by kernel mean matching.

    Solves min_beta 1/2 beta^T K beta - kappa^T beta over 0 <= beta <= B and,
    when the band is included, |sum(beta) - n_tr| <= n_tr * epsilon, with
    kappa_j = (n_tr / n_te) sum_i k(x_j, x_i'). The QP is passed to the
    solver divided by n_tr, which leaves the argmin unchanged.

    Args:
        train (Dataset): Training covariates (labels are ignored).
        test (Dataset): Test covariates.
        cfg (KmmConfig): Kernel, bounds and solver settings.

    Returns:
        ImportanceWeights: The weights with l_hat and solver diagnostics.

    Raises:
        KmmDimensionError: If train and test differ in dimension.
        KmmConvergenceError: If cfg.require_convergence is set and the
            solver stopped at max_iter.
        KmmError: If the QP is rejected by the solver.
    """
    func_name = kmm_weights.__name__
    _check_pair(train, test)
    n_tr, n_te = train.n_rows, test.n_rows

    K = gram(cfg.kernel, train)
    kappa = (n_tr / n_te) * cross_gram(cfg.kernel, train, test).sum(axis=1)
    epsilon = cfg.epsilon_for(n_tr)
    band = None
    if cfg.include_band:
        band = (np.ones(n_tr), n_tr * (1.0 - epsilon), n_tr * (1.0 + epsilon))
    logger.debug(
        "%s: n_tr=%d n_te=%d B=%s epsilon=%.4f band=%s",
        func_name,
        n_tr,
        n_te,
        cfg.B,
        epsilon,
        cfg.include_band,
    )

    try:
        problem = BoxBandQp(
            K / n_tr,
            -kappa / n_tr,
            np.zeros(n_tr),
            np.full(n_tr, float(cfg.B)),
            band,
            check_psd=False,
        )
        solution = solve_qp(problem, tol=cfg.tol, max_iter=int(cfg.max_iter), x0=np.ones(n_tr))
    except QpError as e:
        raise KmmError(f"{func_name}: {e.message}") from e

    if not solution.converged and cfg.require_convergence:
        raise KmmConvergenceError(solution.iterations, solution.kkt_residual)

    test_total = float(gram(cfg.kernel, test).sum())
    l_hat = _l_hat_from_parts(solution.beta, K, kappa, test_total, n_te)
    return ImportanceWeights(
        beta=solution.beta,
        l_hat=l_hat,
        kkt_residual=solution.kkt_residual,
        mean_beta=float(solution.beta.mean()),
        converged=solution.converged,
        iterations=solution.iterations,
        epsilon=epsilon,
        B=float(cfg.B),
        band_active=cfg.include_band,
    )


def mean_discrepancy_bound(n_tr: float, n_te: float, B: float, R: float, delta: float) -> float:
    """
    High-probability bound on the RKHS distance between the true-weighted
    training mean and the test mean:

        sqrt(2 log(2 / delta)) * R * sqrt(B^2 / n_tr + 1 / n_te)

    n_te may be math.inf (population test mean).

    Raises:
        KmmArgumentError: If a size, B or R is not positive or delta is
            outside (0, 1).
    """
    func_name = mean_discrepancy_bound.__name__
    try:
        check_positive(n_tr, "n_tr")
        check_positive(n_te, "n_te")
        check_positive(B, "B")
        check_positive(R, "R")
        check_positive(delta, "delta")
    except ValueError as e:
        raise KmmArgumentError(f"{func_name}: {e}") from e
    if not delta < 1.0:
        raise KmmArgumentError(f"{func_name}: delta must be < 1, got {delta}")
    if math.isinf(n_tr):
        raise KmmArgumentError(f"{func_name}: n_tr must be finite")
    return math.sqrt(2.0 * math.log(2.0 / delta)) * R * math.sqrt(B**2 / n_tr + 1.0 / n_te)
