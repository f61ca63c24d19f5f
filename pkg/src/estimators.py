from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, Optional, Union

import numpy as np
from scipy.stats import multivariate_normal

from .constants import ESTIMATOR_DEFAULTS
from .dataset import Dataset
from .kmm import ImportanceWeights, KmmConfig, kmm_weights
from .ridge import GHatFitter, Predictor
from .utilityfuncs import floor_count

if TYPE_CHECKING:
    from .datagen import GaussianSpec

logger = logging.getLogger(__name__)


class EstimatorError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


class EstimatorArgumentError(EstimatorError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Invalid estimator argument: {message}")


class EmptySplitError(EstimatorError):
    def __init__(self, part: str, rho: float, n: int) -> None:
        super().__init__(f"Split part '{part}' is empty for rho={rho}, n_tr={n}")


class SplitPlan:
    def __init__(self, n_tr: int, rho: Optional[float] = None, reuse_full: bool = True) -> None:
        """
        Initializes the partition of the training rows into the part used
        for the weights (KMM) and the part used to fit g_hat (NR).

        In split mode the KMM part is the first floor(rho * n_tr) rows and
        the NR part is the rest. With reuse_full the KMM part is the first
        floor(rho * n_tr) rows and the NR part is every row.

        Args:
            n_tr (int): Number of training rows.
            rho (float, optional): Fraction in [0, 1]. Defaults to 0.5 in
                split mode and 1 with reuse_full.
            reuse_full (bool): Use all rows for g_hat.

        Raises:
            EstimatorArgumentError: If rho is outside [0, 1] or n_tr < 1.
            EmptySplitError: If the KMM part is empty, or the NR part is
                empty in split mode.
        """
        func_name = SplitPlan.__init__.__qualname__
        if n_tr < 1:
            raise EstimatorArgumentError(f"{func_name}: n_tr must be >= 1, got {n_tr}")
        if rho is None:
            rho = ESTIMATOR_DEFAULTS["reuse_rho"] if reuse_full else ESTIMATOR_DEFAULTS["split_rho"]
        if not 0.0 <= rho <= 1.0:
            raise EstimatorArgumentError(f"{func_name}: rho must be in [0, 1], got {rho}")

        n_kmm = floor_count(rho, n_tr)
        if n_kmm == 0:
            raise EmptySplitError("kmm", rho, n_tr)
        kmm = np.arange(n_kmm)
        nr = np.arange(n_tr) if reuse_full else np.arange(n_kmm, n_tr)
        if nr.size == 0:
            raise EmptySplitError("nr", rho, n_tr)

        kmm.setflags(write=False)
        nr.setflags(write=False)
        self._n_tr = int(n_tr)
        self._rho = float(rho)
        self._reuse_full = bool(reuse_full)
        self._kmm = kmm
        self._nr = nr

    def __repr__(self) -> str:
        return (
            f"SplitPlan(n_tr={self._n_tr}, rho={self._rho}, reuse_full={self._reuse_full},"
            f" kmm={self._kmm.size}, nr={self._nr.size})"
        )

    @property
    def rho(self) -> float:
        return self._rho

    @property
    def reuse_full(self) -> bool:
        return self._reuse_full

    @property
    def n_tr(self) -> int:
        return self._n_tr

    @property
    def kmm_indices(self) -> np.ndarray:
        return self._kmm

    @property
    def nr_indices(self) -> np.ndarray:
        return self._nr

    def to_dict(self) -> Dict[str, object]:
        return {"rho": self._rho, "reuse_full": self._reuse_full, "n_kmm": int(self._kmm.size), "n_nr": int(self._nr.size)}


@dataclass(frozen=True)
class EstimateReport:
    v_kmm: float
    v_nr: float
    v_r: float
    residual_term: float
    plugin_term: float
    weights: Dict[str, object] = field(default_factory=dict)
    gamma: Optional[float] = None
    n_kmm: int = 0
    n_te: int = 0
    plan: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "v_kmm": self.v_kmm,
            "v_nr": self.v_nr,
            "v_r": self.v_r,
            "residual_term": self.residual_term,
            "plugin_term": self.plugin_term,
            "weights": dict(self.weights),
            "gamma": self.gamma,
            "n_kmm": self.n_kmm,
            "n_te": self.n_te,
            "plan": dict(self.plan),
        }


def _weight_vector(weights: Union[ImportanceWeights, np.ndarray]) -> np.ndarray:
    if isinstance(weights, ImportanceWeights):
        return weights.beta
    return np.asarray(weights, dtype=np.float64)


def estimate_v_kmm(train: Dataset, weights: Union[ImportanceWeights, np.ndarray]) -> float:
    """
    V_KMM = (1/n_tr) sum_j beta_j y_j (divides by n_tr, not sum(beta)).
    """
    func_name = estimate_v_kmm.__name__
    y = train.require_labels(func_name)
    beta = _weight_vector(weights)
    if beta.shape != y.shape:
        raise EstimatorArgumentError(
            f"{func_name}: {beta.shape[0]} weights for {y.shape[0]} training rows"
        )
    return float(np.sum(beta * y) / y.shape[0])


def estimate_v_nr(model: Predictor, test: Dataset) -> float:
    """
    V_NR = mean of g_hat over the test covariates.
    """
    return float(np.mean(model.predict(test)))


def estimate_v_r(
    train: Dataset,
    test: Dataset,
    plan: SplitPlan,
    cfg: KmmConfig,
    g_hat: Predictor,
    weights: Optional[Union[ImportanceWeights, np.ndarray]] = None,
) -> EstimateReport:
    """
    Computes the robust estimator

        V_R = (1/k) sum_{j in kmm} beta_j (y_j - g_hat(x_j)) + (1/n_te) sum_i g_hat(x_i')

    with k = floor(rho * n_tr), together with V_KMM on the same weights and
    V_NR on the same g_hat.

    g_hat must already be fitted on plan.nr_indices only (split mode) or on
    all rows (reuse_full); estimate_all enforces that order.

    Args:
        train (Dataset): Labelled training data.
        test (Dataset): Test covariates.
        plan (SplitPlan): Row partition of train.
        cfg (KmmConfig): Weight estimation settings.
        g_hat (Predictor): Regression estimate.
        weights (optional): Weights for the KMM rows. When given (e.g. the
            true density ratio) the KMM solve is skipped.

    Returns:
        EstimateReport: The three estimates and both summands of V_R.

    Raises:
        EstimatorArgumentError: If the plan does not match train or the
            weights have the wrong length.
    """
    func_name = estimate_v_r.__name__
    if plan.n_tr != train.n_rows:
        raise EstimatorArgumentError(
            f"{func_name}: plan covers {plan.n_tr} rows, training data has {train.n_rows}"
        )
    train.require_labels(func_name)
    kmm_part = train.subset(plan.kmm_indices)
    if weights is None:
        weights = kmm_weights(kmm_part.without_labels(), test, cfg)
    elif not isinstance(weights, ImportanceWeights):
        weights = ImportanceWeights.from_vector(weights)
    beta = weights.beta
    k = kmm_part.n_rows
    if beta.shape[0] != k:
        raise EstimatorArgumentError(f"{func_name}: {beta.shape[0]} weights for {k} KMM rows")

    y = kmm_part.y
    g_train = g_hat.predict(kmm_part)
    g_test = g_hat.predict(test)
    residual_term = float(np.sum(beta * (y - g_train)) / k)
    plugin_term = float(np.mean(g_test))
    v_kmm = estimate_v_kmm(kmm_part, beta)
    report = EstimateReport(
        v_kmm=v_kmm,
        v_nr=plugin_term,
        v_r=residual_term + plugin_term,
        residual_term=residual_term,
        plugin_term=plugin_term,
        weights=weights.diagnostics(),
        n_kmm=k,
        n_te=test.n_rows,
        plan=plan.to_dict(),
    )
    logger.debug(
        "%s: v_kmm=%.6f v_nr=%.6f v_r=%.6f", func_name, report.v_kmm, report.v_nr, report.v_r
    )
    return report


def estimate_all(
    train: Dataset,
    test: Dataset,
    plan: SplitPlan,
    cfg: KmmConfig,
    fitter: GHatFitter,
    weights: Optional[Union[ImportanceWeights, np.ndarray]] = None,
) -> EstimateReport:
    """
    Fits g_hat on the NR rows, solves the weights on the KMM rows against
    test (unless weights are supplied) and returns all three estimates.
    """
    nr_part = train.subset(plan.nr_indices)
    g_hat = fitter.fit(nr_part, test.n_rows)
    report = estimate_v_r(train, test, plan, cfg, g_hat, weights)
    gamma = fitter.gamma_for(nr_part.n_rows, test.n_rows)
    return replace(report, gamma=gamma)


def true_density_ratio(p_tr: "GaussianSpec", p_te: "GaussianSpec", x) -> Union[float, np.ndarray]:
    """
    Evaluates dP_te / dP_tr for a pair of Gaussians.

    Args:
        p_tr (GaussianSpec): Training distribution.
        p_te (GaussianSpec): Test distribution.
        x: A point of the common dimension, or a matrix of points (rows).

    Returns:
        float for a single point, otherwise one ratio per row.

    Raises:
        EstimatorArgumentError: If the dimensions disagree or a covariance
            is singular.
    """
    func_name = true_density_ratio.__name__
    if p_tr.dim != p_te.dim:
        raise EstimatorArgumentError(f"{func_name}: dimensions {p_tr.dim} and {p_te.dim} differ")
    points = np.asarray(x, dtype=np.float64).reshape(-1, p_tr.dim)
    try:
        log_te = multivariate_normal(p_te.mean, p_te.covariance).logpdf(points)
        log_tr = multivariate_normal(p_tr.mean, p_tr.covariance).logpdf(points)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EstimatorArgumentError(f"{func_name}: {e}") from e
    ratio = np.exp(np.atleast_1d(log_te) - np.atleast_1d(log_tr))
    return float(ratio[0]) if points.shape[0] == 1 else ratio
