# tests/test_estimators.py

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from src.constants import GammaRule
from src.datagen import Gaussian10dProblem, GaussianSpec, gen_toy1d, toy_regression, toy_test_spec, toy_train_spec
from src.dataset import Dataset
from src.kernels import KernelSpec
from src.kmm import ImportanceWeights, KmmConfig
from src.ridge import (
    ConstantPredictor,
    FunctionPredictor,
    GammaSchedule,
    GHatFitter,
    LinearModel,
    fit_kernel_ridge,
)
from src.estimators import (
    EmptySplitError,
    EstimatorArgumentError,
    SplitPlan,
    estimate_all,
    estimate_v_kmm,
    estimate_v_nr,
    estimate_v_r,
    true_density_ratio,
)

gaussian = KernelSpec.gaussian(1.0)
kmm_cfg = KmmConfig(gaussian)


@pytest.fixture
def toy_pair():
    """
    Fixture to provide a labelled shifted training set and test covariates.
    """
    train, test, _ = gen_toy1d(40, 60, seed=21)
    return train, test


# Split plans


def test_split_plan_default_split_mode():
    plan = SplitPlan(11, reuse_full=False)
    assert plan.rho == 0.5
    assert plan.kmm_indices.tolist() == [0, 1, 2, 3, 4]
    assert plan.nr_indices.tolist() == [5, 6, 7, 8, 9, 10]


def test_split_plan_reuse_mode():
    plan = SplitPlan(6)
    assert plan.rho == 1.0 and plan.reuse_full
    assert plan.kmm_indices.tolist() == list(range(6))
    assert plan.nr_indices.tolist() == list(range(6))
    assert SplitPlan(10, rho=0.3).kmm_indices.size == 3


@pytest.mark.parametrize(
    "n_tr, rho, reuse_full, part",
    [(10, 1.0, False, "nr"), (10, 0.0, True, "kmm"), (3, 0.2, False, "kmm")],
)
def test_split_plan_empty_parts(n_tr, rho, reuse_full, part):
    with pytest.raises(EmptySplitError, match=part):
        SplitPlan(n_tr, rho, reuse_full)


@pytest.mark.parametrize("rho", [-0.1, 1.5])
def test_split_plan_rejects_rho(rho):
    with pytest.raises(EstimatorArgumentError):
        SplitPlan(10, rho)


# Point estimates


@pytest.mark.parametrize(
    "y, beta, expected",
    [
        ([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], 2.0),
        ([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], 0.0),
        ([1.0, 0.0], [2.0, 0.0], 1.0),
    ],
)
def test_estimate_v_kmm(y, beta, expected):
    train = Dataset(np.zeros((len(y), 1)), y)
    assert estimate_v_kmm(train, np.array(beta)) == pytest.approx(expected)


def test_estimate_v_kmm_length_mismatch():
    with pytest.raises(EstimatorArgumentError, match="2 weights for 3"):
        estimate_v_kmm(Dataset(np.zeros((3, 1)), [1.0, 2.0, 3.0]), np.ones(2))


def test_estimate_v_nr():
    test = Dataset([[0.0], [1.0]], role="test")
    assert estimate_v_nr(ConstantPredictor(0.7), test) == pytest.approx(0.7)
    assert estimate_v_nr(LinearModel([1.0]), test) == pytest.approx(0.5)
    model = fit_kernel_ridge(Dataset([[0.2]], [0.5]), 1.0, gaussian)
    assert estimate_v_nr(model, Dataset([[0.2]], role="test")) == pytest.approx(0.25)


def test_zero_regression_reduces_to_kmm(toy_pair):
    """
    With g_hat = 0 the robust estimate equals V_KMM bit for bit.
    """
    train, test = toy_pair
    for plan in (SplitPlan(train.n_rows), SplitPlan(train.n_rows, 0.5, reuse_full=False)):
        report = estimate_v_r(train, test, plan, kmm_cfg, ConstantPredictor(0.0))
        assert report.v_r == report.v_kmm
        assert report.plugin_term == 0.0


def test_decomposition_is_exact(toy_pair):
    train, test = toy_pair
    plan = SplitPlan(train.n_rows)
    g_hat = fit_kernel_ridge(train, 0.05, gaussian)
    report = estimate_v_r(train, test, plan, kmm_cfg, g_hat)
    assert report.v_r == report.residual_term + report.plugin_term
    assert report.v_nr == report.plugin_term
    assert report.n_kmm == train.n_rows and report.n_te == test.n_rows


def test_exact_regression_leaves_no_residual():
    train, test, _ = gen_toy1d(30, 50, seed=4, noise_sd=0.0)
    g = FunctionPredictor(toy_regression, "toy")
    report = estimate_v_r(train, test, SplitPlan(30), kmm_cfg, g)
    assert report.residual_term == pytest.approx(0.0, abs=1e-12)
    assert report.v_r == pytest.approx(float(np.mean(toy_regression(test.X))), abs=1e-12)


def test_supplied_weights_skip_the_solve(toy_pair):
    train, test = toy_pair
    beta = true_density_ratio(toy_train_spec(), toy_test_spec(), train.X)
    report = estimate_v_r(train, test, SplitPlan(train.n_rows), kmm_cfg, ConstantPredictor(0.0), beta)
    assert report.v_kmm == pytest.approx(float(np.sum(beta * train.y) / train.n_rows))
    assert math.isnan(report.weights["l_hat"])
    with pytest.raises(EstimatorArgumentError, match="KMM rows"):
        estimate_v_r(train, test, SplitPlan(train.n_rows), kmm_cfg, ConstantPredictor(0.0), np.ones(3))


def test_plan_must_match_training_rows(toy_pair):
    train, test = toy_pair
    with pytest.raises(EstimatorArgumentError, match="plan covers"):
        estimate_v_r(train, test, SplitPlan(5), kmm_cfg, ConstantPredictor(0.0))


def test_estimate_all_reports_gamma(toy_pair):
    train, test = toy_pair
    plan = SplitPlan(train.n_rows, 0.5, reuse_full=False)
    fitter = GHatFitter.kernel_ridge(gaussian, GammaSchedule(GammaRule.INVERSE_NTR))
    report = estimate_all(train, test, plan, kmm_cfg, fitter)
    assert report.gamma == pytest.approx(1.0 / plan.nr_indices.size)
    assert report.plan["n_kmm"] == 20
    record = report.to_dict()
    assert record["v_r"] == report.v_r
    assert estimate_all(train, test, plan, kmm_cfg, GHatFitter.lasso(0.1)).gamma is None


def test_estimate_all_accepts_importance_weights(toy_pair):
    train, test = toy_pair
    weights = ImportanceWeights.from_vector(np.ones(train.n_rows))
    report = estimate_all(train, test, SplitPlan(train.n_rows), kmm_cfg, GHatFitter.lasso(0.1), weights)
    assert report.v_kmm == pytest.approx(float(np.mean(train.y)))


# True density ratio


def test_true_density_ratio_identical_laws():
    spec = GaussianSpec([0.0, 1.0], [[1.0, 0.2], [0.2, 2.0]])
    ratios = true_density_ratio(spec, spec, np.random.default_rng(0).standard_normal((5, 2)))
    assert ratios == pytest.approx(np.ones(5))


def test_true_density_ratio_value():
    ratio = true_density_ratio(toy_train_spec(), toy_test_spec(), [0.0])
    assert isinstance(ratio, float)
    assert ratio == pytest.approx((5.0 / 3.0) * math.exp(0.5), rel=1e-9)


def test_true_density_ratio_crossing_point():
    p_tr, p_te = toy_train_spec(), toy_test_spec()

    def log_ratio(x):
        return math.log(true_density_ratio(p_tr, p_te, [x]))

    crossing = brentq(log_ratio, 0.0, 2.0, xtol=1e-14)
    assert true_density_ratio(p_tr, p_te, [crossing]) == pytest.approx(1.0, abs=1e-9)


def test_true_density_ratio_dimension_mismatch():
    with pytest.raises(EstimatorArgumentError, match="dimensions"):
        true_density_ratio(toy_train_spec(), GaussianSpec([0.0, 0.0], np.eye(2)), [0.0])


# Monte Carlo properties with the true density ratio


def robust_estimates_with_true_weights(replications, n_tr, n_te, rho=0.5):
    p_tr, p_te = toy_train_spec(), toy_test_spec()
    plan = SplitPlan(n_tr, rho, reuse_full=False)
    fitter = GHatFitter.kernel_ridge(gaussian)
    estimates = []
    for seed in range(replications):
        train, test, _ = gen_toy1d(n_tr, n_te, seed)
        beta = true_density_ratio(p_tr, p_te, train.X[plan.kmm_indices])
        estimates.append(estimate_all(train, test, plan, kmm_cfg, fitter, beta).v_r)
    return np.asarray(estimates)


def test_robust_estimate_is_unbiased_with_true_weights():
    """
    The toy target E[-x + x^3] under N(0, 0.3^2) is 0.
    """
    estimates = robust_estimates_with_true_weights(200, 60, 60)
    stderr = estimates.std(ddof=1) / math.sqrt(estimates.size)
    assert abs(estimates.mean()) <= 3.0 * stderr


@pytest.mark.slow
def test_robust_estimate_is_unbiased_with_true_weights_full():
    estimates = robust_estimates_with_true_weights(1000, 200, 200)
    stderr = estimates.std(ddof=1) / math.sqrt(estimates.size)
    assert abs(estimates.mean()) <= 3.0 * stderr


def test_control_variate_reduces_variance():
    """
    With the true weights and g_hat fitted on an independent sample, V_R
    varies less than V_KMM over the same seeds (99% bootstrap level).
    """
    p_tr, p_te = toy_train_spec(), toy_test_spec()
    n_tr, n_te = 50, 500
    v_r, v_kmm = [], []
    for seed in range(500):
        train, test, _ = gen_toy1d(n_tr, n_te, seed)
        independent, _, _ = gen_toy1d(n_tr, 1, seed + 100_000)
        g_hat = fit_kernel_ridge(independent, 1.0 / n_tr, gaussian)
        beta = true_density_ratio(p_tr, p_te, train.X)
        report = estimate_v_r(train, test, SplitPlan(n_tr), kmm_cfg, g_hat, beta)
        v_r.append(report.v_r)
        v_kmm.append(report.v_kmm)
    v_r, v_kmm = np.asarray(v_r), np.asarray(v_kmm)
    rng = np.random.default_rng(99)
    draws = rng.integers(0, v_r.size, size=(1000, v_r.size))
    wins = np.mean(v_r[draws].var(axis=1, ddof=1) <= v_kmm[draws].var(axis=1, ddof=1))
    assert wins >= 0.99


# Monte Carlo properties on the multivariate simulation


@pytest.fixture(scope="module")
def mild_problem():
    """
    Fixture to provide a 10-dimensional shift whose true density ratio has
    finite variance: nearly isotropic covariances and close means.
    """
    return Gaussian10dProblem(problem_seed=31, mean_scale=0.05, a_scale=0.02, noise_sd=0.1)


def multivariate_robust_estimates(problem, replications, n_tr, n_te, rho=0.5):
    plan = SplitPlan(n_tr, rho, reuse_full=False)
    fitter = GHatFitter.lasso(0.1)
    estimates = []
    for seed in range(replications):
        train, test = problem.sample(n_tr, n_te, seed)
        beta = true_density_ratio(problem.train_spec, problem.test_spec, train.X[plan.kmm_indices])
        estimates.append(estimate_all(train, test, plan, kmm_cfg, fitter, beta).v_r)
    return np.asarray(estimates)


def test_multivariate_robust_estimate_is_unbiased(mild_problem):
    nu = mild_problem.nu_oracle()
    estimates = multivariate_robust_estimates(mild_problem, 200, 60, 60)
    stderr = estimates.std(ddof=1) / math.sqrt(estimates.size)
    assert abs(estimates.mean() - nu) <= 3.0 * stderr


@pytest.mark.slow
def test_multivariate_robust_estimate_is_unbiased_full(mild_problem):
    nu = mild_problem.nu_oracle(samples=1_000_000)
    estimates = multivariate_robust_estimates(mild_problem, 1000, 200, 200)
    stderr = estimates.std(ddof=1) / math.sqrt(estimates.size)
    assert abs(estimates.mean() - nu) <= 3.0 * stderr


def test_multivariate_control_variate_reduces_variance(mild_problem):
    n_tr, n_te = 50, 500
    v_r, v_kmm = [], []
    for seed in range(500):
        train, test = mild_problem.sample(n_tr, n_te, seed)
        independent, _ = mild_problem.sample(n_tr, 1, seed + 100_000)
        g_hat = GHatFitter.lasso(0.1).fit(independent, n_te)
        beta = true_density_ratio(mild_problem.train_spec, mild_problem.test_spec, train.X)
        report = estimate_v_r(train, test, SplitPlan(n_tr), kmm_cfg, g_hat, beta)
        v_r.append(report.v_r)
        v_kmm.append(report.v_kmm)
    v_r, v_kmm = np.asarray(v_r), np.asarray(v_kmm)
    draws = np.random.default_rng(99).integers(0, v_r.size, size=(1000, v_r.size))
    wins = np.mean(v_r[draws].var(axis=1, ddof=1) <= v_kmm[draws].var(axis=1, ddof=1))
    assert wins >= 0.99
