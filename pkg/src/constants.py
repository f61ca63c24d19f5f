# Constants
from enum import Enum
import math

from frozendict import frozendict


class KernelFamily(Enum):
    GAUSSIAN = "gaussian"
    POLYNOMIAL = "polynomial"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


class DatasetRole(Enum):
    TRAIN = "train"
    TEST = "test"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


class GammaRule(Enum):
    THETA_OPTIMAL = "theta"
    INVERSE_N = "n"
    INVERSE_NTR = "ntr"
    FIXED = "fixed"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


class LossType(Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


class ErmMode(Enum):
    ROBUST = "robust"
    KMM_WEIGHTED = "kmm"
    UNWEIGHTED_NR = "unweighted"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


class ScenarioKind(Enum):
    TOY1D = "toy"
    UCI_BIAS = "uci"
    GAUSSIAN10D = "table1"
    RATE_SWEEP = "rates"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


class GHatKind(Enum):
    KERNEL_RIDGE = "kernel_ridge"
    LASSO_LINEAR = "lasso"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value


# Generator identity echoed in every experiment report
RNG_NAME = "numpy.random.PCG64"

# Symmetric / PSD tolerance for Gram matrices
GRAM_PSD_TOLERANCE = 1e-8

QP_DEFAULTS = frozendict(
    {
        "tol": 1e-7,
        "max_iter": 50_000,
        "dykstra_max_iter": 100,
        "dykstra_tol": 1e-12,
        "band_tol": 1e-10,
        "feasibility_tol": 1e-9,
        "backtrack_factor": 2.0,
    }
)

KMM_DEFAULTS = frozendict(
    {
        "B": 1000.0,
        "include_band": True,
    }
)

ERM_DEFAULTS = frozendict(
    {
        "logistic_tol": 1e-6,
        "logistic_max_iter": 100_000,
        "armijo_c": 1e-4,
        "armijo_shrink": 0.5,
        "g_hat_clip": 1e-6,
        "solve_residual_tol": 1e-8,
    }
)

ESTIMATOR_DEFAULTS = frozendict(
    {
        "split_rho": 0.5,
        "reuse_rho": 1.0,
    }
)

TOY_DEFAULTS = frozendict(
    {
        "train_mean": 0.5,
        "train_sd": 0.5,
        "test_mean": 0.0,
        "test_sd": 0.3,
        "noise_sd": 0.3,
        "best_slope": -0.73,
    }
)

# Average MSE reported for the 10-d Gaussian estimation study,
# keyed by (lasso lambda, n_tr, n_te) -> (V_NR, V_KMM, V_R)
TABLE1_REFERENCE = frozendict(
    {
        (0.1, 50, 500): (0.9970, 0.9489, 0.9134),
        (0.1, 500, 500): (1.0006, 0.9294, 0.9340),
        (0.1, 500, 50): (1.0021, 0.9245, 0.9242),
        (10.0, 50, 500): (0.9962, 0.9493, 0.9467),
        (10.0, 500, 500): (0.9964, 0.9294, 0.9288),
        (10.0, 500, 50): (0.9965, 0.9245, 0.9293),
    }
)

TABLE1_SIGMA = math.sqrt(5.0)
UCI_SIGMA = math.sqrt(0.5)
UCI_LAMBDA = 5.0
UCI_TRAIN_FRACTIONS = (0.3, 0.5, 0.7)
RATE_SIZES = (50, 100, 200, 400, 800)

# Breast Cancer Wisconsin layouts: (column count, label column index)
UCI_LAYOUTS = frozendict(
    {
        "original": frozendict({"n_columns": 11, "label_column": 10, "feature_columns": tuple(range(1, 10))}),
        "diagnostic": frozendict({"n_columns": 32, "label_column": 1, "feature_columns": tuple(range(2, 32))}),
    }
)

UCI_LABEL_MAPS = frozendict(
    {
        "original": frozendict({2: 0, 4: 1}),
        "diagnostic": frozendict({"B": 0, "M": 1}),
    }
)

GAUSSIAN10D_DEFAULTS = frozendict(
    {
        "dim": 10,
        "problem_seed": 20_240_531,
        "oracle_seed": 977,
        "oracle_samples": 100_000,
        "noise_sd": 0.5,
        "mean_scale": 1.0,
        "a_scale": 1.0,
        "cov_jitter": 0.1,
        "c1_scale": 0.1,
        "c2_scale": math.sqrt(0.1),
    }
)

# Smooth regression function for the rate sweep: one kernel section
RATE_PROBLEM_DEFAULTS = frozendict(
    {
        "center": 0.25,
        "bandwidth": 1.0,
        "noise_sd": 0.1,
    }
)

UCI_DEFAULTS = frozendict(
    {
        "layout": "original",
        "sigma1": 0.01,
    }
)

EXPERIMENT_DEFAULTS = frozendict(
    {
        "toy": frozendict({"replications": 20, "base_seed": 1, "n_tr": 500, "n_te": 500}),
        "table1": frozendict({"replications": 100, "base_seed": 1}),
        "uci": frozendict({"replications": 10, "base_seed": 1}),
        "rates": frozendict({"replications": 50, "base_seed": 1, "bootstrap": 1000}),
    }
)
