from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from .constants import (
    GAUSSIAN10D_DEFAULTS,
    RATE_PROBLEM_DEFAULTS,
    TOY_DEFAULTS,
    UCI_LABEL_MAPS,
    UCI_LAYOUTS,
    DatasetRole,
    ScenarioKind,
)
from .dataset import Dataset
from .utilityfuncs import as_float_matrix, as_float_vector, floor_count, make_rng

logger = logging.getLogger(__name__)

ORACLE_CHUNK = 100_000


class DatagenError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


class DatagenArgumentError(DatagenError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Invalid generator argument: {message}")


class DatagenFormatError(DatagenError):
    def __init__(self, message: str) -> None:
        super().__init__(f"Malformed data file: {message}")


class EmptySubsampleError(DatagenError):
    def __init__(self, sigma1: float) -> None:
        super().__init__(
            f"Biased subsampling with sigma1={sigma1} rejected every row; use a smaller |sigma1|"
        )


class GaussianSpec:
    def __init__(self, mean, covariance) -> None:
        """
        Initializes a multivariate Gaussian.

        Args:
            mean: Mean vector of length p.
            covariance: Symmetric positive definite (p, p) matrix; a scalar
                is read as the variance of a 1-d Gaussian.

        Raises:
            DatagenArgumentError: If shapes disagree or the covariance is not
                symmetric positive definite.
        """
        func_name = GaussianSpec.__init__.__qualname__
        try:
            mean_vec = as_float_vector(mean, "mean").copy()
            cov = as_float_matrix(covariance, "covariance").copy()
        except ValueError as e:
            raise DatagenArgumentError(f"{func_name}: {e}") from e
        p = mean_vec.shape[0]
        if cov.shape != (p, p):
            raise DatagenArgumentError(f"{func_name}: covariance shape {cov.shape} for mean length {p}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(cov).max()))):
            raise DatagenArgumentError(f"{func_name}: covariance is not symmetric")
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise DatagenArgumentError(f"{func_name}: covariance is not positive definite") from e

        for array in (mean_vec, cov, factor):
            array.setflags(write=False)
        self._mean = mean_vec
        self._covariance = cov
        self._factor = factor

    def __repr__(self) -> str:
        return f"GaussianSpec(dim={self.dim})"

    @classmethod
    def univariate(cls, mean: float, sd: float) -> GaussianSpec:
        return cls([mean], [[sd * sd]])

    @property
    def mean(self) -> np.ndarray:
        return self._mean

    @property
    def covariance(self) -> np.ndarray:
        return self._covariance

    @property
    def dim(self) -> int:
        return self._mean.shape[0]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self._mean + rng.standard_normal((n, self.dim)) @ self._factor.T

    def to_dict(self) -> Dict[str, object]:
        return {"mean": self._mean.tolist(), "covariance": self._covariance.tolist()}


@dataclass(frozen=True)
class ExperimentScenario:
    """
    Data-generating settings of one experiment.

    sizes lists the (n_tr, n_te) pairs of the run; the UCI scenario uses
    train_fractions instead.
    """

    kind: ScenarioKind
    sizes: Tuple[Tuple[int, int], ...] = ()
    noise_sd: Optional[float] = None
    problem_seed: int = GAUSSIAN10D_DEFAULTS["problem_seed"]
    sigma1: Optional[float] = None
    c1: Optional[float] = None
    c2: Optional[Tuple[float, ...]] = None
    train_fractions: Tuple[float, ...] = ()
    data_path: Optional[str] = None
    layout: str = "original"
    shift: bool = True
    extra: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        func_name = "ExperimentScenario"
        kind = ScenarioKind(self.kind) if isinstance(self.kind, str) else self.kind
        object.__setattr__(self, "kind", kind)
        sizes = tuple((int(n_tr), int(n_te)) for n_tr, n_te in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "train_fractions", tuple(float(f) for f in self.train_fractions))
        if self.c2 is not None:
            object.__setattr__(self, "c2", tuple(float(v) for v in self.c2))
        if any(n_tr < 1 or n_te < 1 for n_tr, n_te in sizes):
            raise DatagenArgumentError(f"{func_name}: sample sizes must be >= 1, got {sizes}")
        if any(not 0.0 < f < 1.0 for f in self.train_fractions):
            raise DatagenArgumentError(
                f"{func_name}: train fractions must lie in (0, 1), got {self.train_fractions}"
            )
        if isinstance(self.problem_seed, bool) or not isinstance(self.problem_seed, int):
            raise DatagenArgumentError(f"{func_name}: problem_seed must be an explicit integer")
        if self.noise_sd is not None and self.noise_sd < 0:
            raise DatagenArgumentError(f"{func_name}: noise_sd must be >= 0")
        if self.layout not in UCI_LAYOUTS:
            raise DatagenArgumentError(f"{func_name}: unknown layout '{self.layout}'")

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "sizes": [list(pair) for pair in self.sizes],
            "noise_sd": self.noise_sd,
            "problem_seed": self.problem_seed,
            "sigma1": self.sigma1,
            "c1": self.c1,
            "c2": None if self.c2 is None else list(self.c2),
            "train_fractions": list(self.train_fractions),
            "data_path": self.data_path,
            "layout": self.layout,
            "shift": self.shift,
            "extra": dict(self.extra),
        }


def _check_sizes(n_tr: int, n_te: int, caller: str) -> None:
    if n_tr < 1 or n_te < 1:
        raise DatagenArgumentError(f"{caller}: sample sizes must be >= 1, got {n_tr}, {n_te}")


def toy_regression(x: np.ndarray) -> np.ndarray:
    """
    g(x) = -x + x^3 on the first column.
    """
    values = np.asarray(x, dtype=np.float64)
    values = values[:, 0] if values.ndim == 2 else values
    return -values + values**3


def toy_train_spec() -> GaussianSpec:
    return GaussianSpec.univariate(TOY_DEFAULTS["train_mean"], TOY_DEFAULTS["train_sd"])


def toy_test_spec() -> GaussianSpec:
    return GaussianSpec.univariate(TOY_DEFAULTS["test_mean"], TOY_DEFAULTS["test_sd"])


def gen_toy1d(
    n_tr: int,
    n_te: int,
    seed: int,
    noise_sd: float = TOY_DEFAULTS["noise_sd"],
    shift: bool = True,
    share_covariates: bool = False,
) -> Tuple[Dataset, Dataset, np.ndarray]:
    """
    Draws the polynomial regression toy problem.

    x_tr ~ N(0.5, 0.5^2), x_te ~ N(0, 0.3^2), y = -x + x^3 + N(0, noise_sd^2).

    Args:
        n_tr (int): Training size.
        n_te (int): Test size.
        seed (int): Explicit seed.
        noise_sd (float): Label noise standard deviation.
        shift (bool): Draw test covariates from the test distribution;
            False draws them from the training distribution.
        share_covariates (bool): Reuse the training covariates as test
            covariates (requires n_te == n_tr).

    Returns:
        (train, test, test_labels): labelled training data, unlabelled test
        covariates and the held-out test labels.
    """
    func_name = gen_toy1d.__name__
    _check_sizes(n_tr, n_te, func_name)
    if share_covariates and n_te != n_tr:
        raise DatagenArgumentError(f"{func_name}: shared covariates need n_te == n_tr")
    rng = make_rng(seed)
    train_spec = toy_train_spec()
    test_spec = toy_test_spec() if shift else train_spec

    x_tr = train_spec.sample(rng, n_tr)
    y_tr = toy_regression(x_tr) + noise_sd * rng.standard_normal(n_tr)
    x_te = x_tr.copy() if share_covariates else test_spec.sample(rng, n_te)
    y_te = toy_regression(x_te) + noise_sd * rng.standard_normal(n_te)
    return Dataset(x_tr, y_tr), Dataset(x_te, role=DatasetRole.TEST), y_te


class Gaussian10dProblem:
    def __init__(
        self,
        problem_seed: int = GAUSSIAN10D_DEFAULTS["problem_seed"],
        dim: int = GAUSSIAN10D_DEFAULTS["dim"],
        noise_sd: float = GAUSSIAN10D_DEFAULTS["noise_sd"],
        mean_scale: float = GAUSSIAN10D_DEFAULTS["mean_scale"],
        a_scale: float = GAUSSIAN10D_DEFAULTS["a_scale"],
        c1: Optional[float] = None,
        c2=None,
        shift: bool = True,
    ) -> None:
        """
        Initializes the multivariate simulation: two Gaussians with random
        means and covariances a_scale^2 A A^T + 0.1 I (A standard normal)
        and the regression function g(x) = sin(c1 ||x||^2) + 1 / (1 + exp(c2^T x)).

        Everything random is drawn once from problem_seed, so replications
        share one problem and differ only in their samples.

        Args:
            problem_seed (int): Seed of the problem draw.
            dim (int): Dimension.
            noise_sd (float): Label noise standard deviation.
            mean_scale (float): Scale of the random means.
            a_scale (float): Scale of the random covariance factors.
            c1 (float, optional): Overrides the random c1.
            c2 (optional): Overrides the random c2.
            shift (bool): False makes the test distribution equal to the
                training distribution.
        """
        func_name = Gaussian10dProblem.__init__.__qualname__
        if dim < 1:
            raise DatagenArgumentError(f"{func_name}: dim must be >= 1, got {dim}")
        rng = make_rng(problem_seed)
        jitter = GAUSSIAN10D_DEFAULTS["cov_jitter"] * np.eye(dim)

        def draw_spec() -> GaussianSpec:
            mean = mean_scale * rng.standard_normal(dim)
            A = a_scale * rng.standard_normal((dim, dim))
            return GaussianSpec(mean, A @ A.T + jitter)

        self._train_spec = draw_spec()
        test_spec = draw_spec()
        self._test_spec = test_spec if shift else self._train_spec
        drawn_c1 = GAUSSIAN10D_DEFAULTS["c1_scale"] * rng.standard_normal()
        drawn_c2 = GAUSSIAN10D_DEFAULTS["c2_scale"] * rng.standard_normal(dim)
        self._c1 = float(drawn_c1 if c1 is None else c1)
        self._c2 = drawn_c2 if c2 is None else as_float_vector(c2, "c2")
        if self._c2.shape[0] != dim:
            raise DatagenArgumentError(f"{func_name}: c2 must have length {dim}")
        self._noise_sd = float(noise_sd)
        self._problem_seed = int(problem_seed)
        self._oracle_cache: Dict[Tuple[int, int], float] = {}

    def __repr__(self) -> str:
        return f"Gaussian10dProblem(problem_seed={self._problem_seed}, dim={self.dim})"

    @property
    def train_spec(self) -> GaussianSpec:
        return self._train_spec

    @property
    def test_spec(self) -> GaussianSpec:
        return self._test_spec

    @property
    def c1(self) -> float:
        return self._c1

    @property
    def c2(self) -> np.ndarray:
        return self._c2

    @property
    def noise_sd(self) -> float:
        return self._noise_sd

    @property
    def dim(self) -> int:
        return self._train_spec.dim

    def regression(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.sin(self._c1 * np.einsum("ij,ij->i", X, X)) + 1.0 / (1.0 + np.exp(X @ self._c2))

    def sample(self, n_tr: int, n_te: int, seed: int) -> Tuple[Dataset, Dataset]:
        func_name = self.sample.__qualname__
        _check_sizes(n_tr, n_te, func_name)
        rng = make_rng(seed)
        x_tr = self._train_spec.sample(rng, n_tr)
        y_tr = self.regression(x_tr) + self._noise_sd * rng.standard_normal(n_tr)
        x_te = self._test_spec.sample(rng, n_te)
        return Dataset(x_tr, y_tr), Dataset(x_te, role=DatasetRole.TEST)

    def nu_oracle(
        self,
        samples: int = GAUSSIAN10D_DEFAULTS["oracle_samples"],
        oracle_seed: int = GAUSSIAN10D_DEFAULTS["oracle_seed"],
    ) -> float:
        """
        Noise-free Monte Carlo mean of g under the test distribution.
        """
        key = (int(samples), int(oracle_seed))
        if key not in self._oracle_cache:
            rng = make_rng(oracle_seed)
            total = 0.0
            remaining = int(samples)
            while remaining > 0:
                chunk = min(remaining, ORACLE_CHUNK)
                total += float(np.sum(self.regression(self._test_spec.sample(rng, chunk))))
                remaining -= chunk
            self._oracle_cache[key] = total / samples
            logger.debug("nu_oracle: %d samples, seed %d -> %.6f", samples, oracle_seed, self._oracle_cache[key])
        return self._oracle_cache[key]

    def to_dict(self) -> Dict[str, object]:
        return {
            "problem_seed": self._problem_seed,
            "train": self._train_spec.to_dict(),
            "test": self._test_spec.to_dict(),
            "c1": self._c1,
            "c2": self._c2.tolist(),
            "noise_sd": self._noise_sd,
        }


def gen_gaussian10d(
    n_tr: int,
    n_te: int,
    seed: int,
    problem: Optional[Gaussian10dProblem] = None,
    oracle_samples: int = GAUSSIAN10D_DEFAULTS["oracle_samples"],
    oracle_seed: int = GAUSSIAN10D_DEFAULTS["oracle_seed"],
) -> Tuple[Dataset, Dataset, float]:
    """
    Draws one replication of the multivariate simulation.

    Returns:
        (train, test, nu_oracle): noisy labelled training data, unlabelled
        test covariates and the Monte Carlo target mean.
    """
    problem = problem or Gaussian10dProblem()
    train, test = problem.sample(n_tr, n_te, seed)
    return train, test, problem.nu_oracle(oracle_samples, oracle_seed)


class KernelSectionProblem:
    """
    One-dimensional shift problem whose regression function is a single
    kernel section g(x) = exp(-bandwidth |x - center|), so g lies in the
    RKHS of the matching kernel. The target mean is available in closed form.
    """

    def __init__(
        self,
        center: float = RATE_PROBLEM_DEFAULTS["center"],
        bandwidth: float = RATE_PROBLEM_DEFAULTS["bandwidth"],
        noise_sd: float = RATE_PROBLEM_DEFAULTS["noise_sd"],
    ) -> None:
        if not bandwidth > 0:
            raise DatagenArgumentError(f"KernelSectionProblem: bandwidth must be > 0, got {bandwidth}")
        self._center = float(center)
        self._bandwidth = float(bandwidth)
        self._noise_sd = float(noise_sd)
        self._train_spec = toy_train_spec()
        self._test_spec = toy_test_spec()

    @property
    def train_spec(self) -> GaussianSpec:
        return self._train_spec

    @property
    def test_spec(self) -> GaussianSpec:
        return self._test_spec

    def regression(self, X: np.ndarray) -> np.ndarray:
        values = np.asarray(X, dtype=np.float64)
        values = values[:, 0] if values.ndim == 2 else values
        return np.exp(-self._bandwidth * np.abs(values - self._center))

    def nu(self) -> float:
        """
        E[exp(-b |W|)] for W = X - center ~ N(d, s^2), evaluated in log space.
        """
        d = float(self._test_spec.mean[0]) - self._center
        s = math.sqrt(float(self._test_spec.covariance[0, 0]))
        b = self._bandwidth
        base = 0.5 * b * b * s * s
        upper = base - b * d + norm.logcdf(d / s - b * s)
        lower = base + b * d + norm.logcdf(-d / s - b * s)
        return float(np.exp(upper) + np.exp(lower))

    def sample(self, n_tr: int, n_te: int, seed: int) -> Tuple[Dataset, Dataset]:
        _check_sizes(n_tr, n_te, "KernelSectionProblem.sample")
        rng = make_rng(seed)
        x_tr = self._train_spec.sample(rng, n_tr)
        y_tr = self.regression(x_tr) + self._noise_sd * rng.standard_normal(n_tr)
        x_te = self._test_spec.sample(rng, n_te)
        return Dataset(x_tr, y_tr), Dataset(x_te, role=DatasetRole.TEST)

    def to_dict(self) -> Dict[str, object]:
        return {"center": self._center, "bandwidth": self._bandwidth, "noise_sd": self._noise_sd}


def biased_subsample(train: Dataset, sigma1: float, seed: int) -> Dataset:
    """
    Keeps each row independently with probability
    exp(-sigma1 ||x_i - x_bar||) / max_j exp(-sigma1 ||x_j - x_bar||),
    x_bar being the sample mean. Positive sigma1 favours rows near the mean,
    negative sigma1 rows far from it.

    Raises:
        EmptySubsampleError: If no row is kept.
    """
    func_name = biased_subsample.__name__
    if not math.isfinite(sigma1):
        raise DatagenArgumentError(f"{func_name}: sigma1 must be finite, got {sigma1}")
    if sigma1 < 0:
        logger.warning("%s: sigma1=%s < 0 favours rows far from the mean", func_name, sigma1)
    distances = np.linalg.norm(train.X - train.X.mean(axis=0), axis=1)
    log_keep = -sigma1 * distances
    keep_probability = np.exp(log_keep - log_keep.max())
    rng = make_rng(seed)
    kept = np.flatnonzero(rng.uniform(size=train.n_rows) < keep_probability)
    if kept.size == 0:
        raise EmptySubsampleError(sigma1)
    logger.debug("%s: kept %d of %d rows", func_name, kept.size, train.n_rows)
    return train.subset(kept)


def split_train_test(data: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Random proportion split; the test part is the disjoint complement and
    keeps its labels as held out.
    """
    func_name = split_train_test.__name__
    if not 0.0 < train_fraction < 1.0:
        raise DatagenArgumentError(f"{func_name}: train_fraction must be in (0, 1), got {train_fraction}")
    n_train = floor_count(train_fraction, data.n_rows)
    if n_train == 0 or n_train == data.n_rows:
        raise DatagenArgumentError(
            f"{func_name}: fraction {train_fraction} leaves an empty part of {data.n_rows} rows"
        )
    order = make_rng(seed).permutation(data.n_rows)
    train = data.subset(np.sort(order[:n_train])).as_role(DatasetRole.TRAIN)
    test = data.subset(np.sort(order[n_train:])).as_role(DatasetRole.TEST, labels_heldout=True)
    return train, test


def load_uci_breast_cancer(path: Union[str, Path], layout: str = "original") -> Dataset:
    """
    Loads the Breast Cancer Wisconsin data.

    The 'original' layout is id, 9 integer features, class in {2, 4}; the
    'diagnostic' layout is id, diagnosis in {B, M}, 30 real features. Rows
    with '?' markers are dropped, labels become {0, 1} (malignant = 1) and
    features are standardized to zero mean and unit variance.

    Raises:
        DatagenFormatError: If the file cannot be read or does not match the
            layout.
    """
    func_name = load_uci_breast_cancer.__name__
    if layout not in UCI_LAYOUTS:
        raise DatagenArgumentError(f"{func_name}: unknown layout '{layout}'")
    spec = UCI_LAYOUTS[layout]
    try:
        frame = pd.read_csv(path, header=None, na_values="?", skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatagenFormatError(f"{func_name}: {e}") from e
    if frame.shape[1] != spec["n_columns"]:
        raise DatagenFormatError(
            f"{func_name}: expected {spec['n_columns']} columns for layout '{layout}', got {frame.shape[1]}"
        )

    complete = frame.dropna(axis=0, how="any")
    dropped = len(frame) - len(complete)
    if dropped:
        logger.warning("%s: dropped %d rows with missing values", func_name, dropped)
    if complete.empty:
        raise DatagenFormatError(f"{func_name}: no complete rows in {path}")

    label_map = UCI_LABEL_MAPS[layout]
    raw_labels = complete.iloc[:, spec["label_column"]]
    if layout == "original":
        raw_labels = pd.to_numeric(raw_labels, errors="coerce")
    labels = raw_labels.map(dict(label_map))
    if labels.isna().any():
        unknown = sorted(set(raw_labels[labels.isna()].astype(str)))
        raise DatagenFormatError(f"{func_name}: unknown class labels {unknown}")

    try:
        features = complete.iloc[:, list(spec["feature_columns"])].apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as e:
        raise DatagenFormatError(f"{func_name}: non-numeric feature values ({e})") from e
    X = features.to_numpy(dtype=np.float64)
    means = X.mean(axis=0)
    scales = X.std(axis=0, ddof=0)
    constant = scales == 0.0
    if np.any(constant):
        logger.warning(
            "%s: constant feature columns %s are only centred", func_name, np.flatnonzero(constant).tolist()
        )
        scales = np.where(constant, 1.0, scales)
    X = (X - means) / scales
    logger.info("%s: loaded %d rows x %d features from %s", func_name, X.shape[0], X.shape[1], path)
    return Dataset(X, labels.to_numpy(dtype=np.float64))
