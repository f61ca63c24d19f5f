# tests/test_erm.py

import numpy as np
import pytest

from src.constants import DatasetRole, ErmMode, LossType
from src.datagen import gen_toy1d
from src.dataset import Dataset, DatasetArgumentError
from src.estimators import SplitPlan
from src.kernels import KernelSpec
from src.ridge import ConstantPredictor, FunctionPredictor, fit_kernel_ridge
from src.erm import (
    ErmArgumentError,
    ErmFit,
    ErmProblem,
    classify_erm,
    fit_erm,
    fit_kmm_weighted_logistic,
    fit_kmm_weighted_ridge,
    fit_ols_slope,
    fit_robust_least_squares,
    fit_robust_logistic,
    fit_robust_slope,
    fit_unweighted_nr_erm,
    fit_weighted_slope,
    misclassification_rate,
    predict_erm,
    predict_proba_erm,
    kmm_logistic_gradient,
    kmm_logistic_objective,
    kmm_squared_gradient,
    kmm_squared_objective,
    robust_blocks,
    robust_logistic_gradient,
    robust_logistic_objective,
    robust_squared_gradient,
    robust_squared_objective,
)

gaussian = KernelSpec.gaussian(1.0)


@pytest.fixture
def regression_pair():
    """
    Fixture to provide a small shifted regression problem with a fitted g_hat.
    """
    train, test, _ = gen_toy1d(12, 8, seed=5)
    g_hat = fit_kernel_ridge(train, 0.1, gaussian)
    return train, test, g_hat


@pytest.fixture
def classification_pair():
    """
    Fixture to provide separable 1-d labels (y = 1 for x > 0) and test
    points with held-out labels.
    """
    train = Dataset([[-2.0], [-1.5], [-1.0], [1.0], [1.5], [2.0]], [0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    test = Dataset(
        [[-1.8], [-0.8], [0.9], [1.7]],
        [0.0, 0.0, 1.0, 1.0],
        role=DatasetRole.TEST,
        labels_heldout=True,
    )
    return train, test


# Problem settings


@pytest.mark.parametrize("kwargs", [{"lam": 0.0}, {"lam": -1.0}, {"tol": 0.0}, {"max_iter": 0}])
def test_invalid_problem(kwargs):
    with pytest.raises(ErmArgumentError):
        ErmProblem(gaussian, **kwargs)


def test_problem_accepts_strings():
    problem = ErmProblem(gaussian, loss="logistic", mode="kmm")
    assert problem.loss == LossType.LOGISTIC
    assert problem.mode == ErmMode.KMM_WEIGHTED
    assert problem.to_dict()["lambda"] == 1.0


# Robust least squares


def test_robust_blocks_layout(regression_pair):
    train, test, g_hat = regression_pair
    X_tot, K_tot, w1, w2 = robust_blocks(train, test, np.ones(12), g_hat, gaussian)
    assert X_tot.shape == (20, 1) and K_tot.shape == (20, 20)
    assert np.all(w1[12:] == 0.0) and np.all(w2[:12] == 0.0)
    assert w1[:12] == pytest.approx(train.y - g_hat.predict(train))
    assert w2[12:] == pytest.approx(g_hat.predict(test))


def test_robust_least_squares_is_stationary(regression_pair):
    train, test, g_hat = regression_pair
    fit = fit_robust_least_squares(train, test, np.ones(12), g_hat, 0.05, gaussian)
    assert fit.n_span == 20
    assert fit.mode == ErmMode.ROBUST
    assert fit.grad_norm <= 1e-8
    assert fit.residual <= 1e-8


def test_robust_least_squares_minimizes_objective(regression_pair):
    train, test, g_hat = regression_pair
    lam = 0.05
    fit = fit_robust_least_squares(train, test, np.ones(12), g_hat, lam, gaussian)
    _, K_tot, w1, w2 = robust_blocks(train, test, np.ones(12), g_hat, gaussian)
    rng = np.random.default_rng(0)
    for _ in range(5):
        moved = fit.alpha_hat + 1e-2 * rng.standard_normal(fit.alpha_hat.shape)
        assert robust_squared_objective(moved, K_tot, w1, w2, 12, 8, lam) >= fit.objective - 1e-12


def test_zero_weights_reduce_to_plug_in_fit(regression_pair):
    """
    With beta = 0 the train block carries no signal and the robust fit
    predicts like the plug-in fit on the test span.
    """
    train, test, g_hat = regression_pair
    robust = fit_robust_least_squares(train, test, np.zeros(12), g_hat, 0.05, gaussian)
    plug_in = fit_unweighted_nr_erm(test, g_hat, 0.05, gaussian)
    assert robust.alpha_hat[:12] == pytest.approx(np.zeros(12), abs=1e-12)
    grid = np.linspace(-1.0, 2.0, 7)[:, None]
    assert predict_erm(robust, grid) == pytest.approx(predict_erm(plug_in, grid), abs=1e-10)


def test_robust_fit_rejects_bad_inputs(regression_pair):
    train, test, g_hat = regression_pair
    with pytest.raises(ErmArgumentError, match="3 weights for 12"):
        fit_robust_least_squares(train, test, np.ones(3), g_hat, 0.05, gaussian)
    with pytest.raises(ErmArgumentError, match="features"):
        fit_robust_least_squares(train, Dataset(np.zeros((2, 2)), role="test"), np.ones(12), g_hat, 0.05, gaussian)
    with pytest.raises(ErmArgumentError, match="lambda"):
        fit_robust_least_squares(train, test, np.ones(12), g_hat, 0.0, gaussian)


# Importance-weighted ridge


def test_unit_weights_match_kernel_ridge(regression_pair):
    train, _, _ = regression_pair
    lam = 0.2
    weighted = fit_kmm_weighted_ridge(train, np.ones(12), lam, gaussian, n_te=12)
    plain = fit_kernel_ridge(train, lam, gaussian)
    assert weighted.alpha_hat == pytest.approx(plain.alpha, abs=1e-10)
    assert weighted.grad_norm <= 1e-8


def test_weighted_ridge_needs_test_size(regression_pair):
    train, _, _ = regression_pair
    with pytest.raises(ErmArgumentError, match="n_te"):
        fit_kmm_weighted_ridge(train, np.ones(12), 0.1, gaussian, n_te=0)


# Logistic fits


def test_weighted_logistic_separates(classification_pair):
    train, test = classification_pair
    fit = fit_kmm_weighted_logistic(train, np.ones(6), 1e-3, gaussian)
    assert fit.converged
    assert fit.loss == LossType.LOGISTIC
    assert np.all(np.diff(fit.objective_trace) <= 0.0)
    probabilities = predict_proba_erm(fit, test)
    assert np.all((probabilities >= 0.0) & (probabilities <= 1.0))
    assert classify_erm(fit, test).tolist() == [0, 0, 1, 1]
    assert misclassification_rate(fit, test) == 0.0


def test_robust_logistic_with_exact_probabilities(classification_pair):
    train, test = classification_pair
    g_hat = FunctionPredictor(lambda x: (x[:, 0] > 0).astype(float), "step")
    fit = fit_robust_logistic(train, test, np.ones(6), g_hat, 1e-3, gaussian)
    assert fit.n_span == 10
    assert classify_erm(fit, test).tolist() == [0, 0, 1, 1]


def test_robust_logistic_zero_weights_match_plug_in(classification_pair):
    train, test = classification_pair
    g_hat = ConstantPredictor(0.3)
    robust = fit_robust_logistic(train, test, np.zeros(6), g_hat, 0.01, gaussian, tol=1e-8)
    plug_in = fit_unweighted_nr_erm(test, g_hat, 0.01, gaussian, LossType.LOGISTIC, tol=1e-8)
    grid = np.linspace(-2.0, 2.0, 5)[:, None]
    assert predict_proba_erm(robust, grid) == pytest.approx(predict_proba_erm(plug_in, grid), abs=1e-3)


def test_misclassification_needs_labels(classification_pair):
    train, test = classification_pair
    fit = fit_kmm_weighted_logistic(train, np.ones(6), 1e-3, gaussian)
    with pytest.raises(DatasetArgumentError, match="no labels"):
        misclassification_rate(fit, test.without_labels())


# Dispatch and serialization


def test_fit_erm_dispatch(regression_pair):
    train, test, g_hat = regression_pair
    plan = SplitPlan(12)
    weights = np.ones(12)
    for mode in ErmMode:
        fit = fit_erm(ErmProblem(gaussian, lam=0.1, mode=mode), train, test, plan, weights, g_hat)
        assert fit.mode == mode
        assert fit.loss == LossType.SQUARED
    unweighted = fit_erm(ErmProblem(gaussian, lam=0.1, mode="unweighted"), train, test, plan, None, g_hat)
    assert unweighted.n_span == test.n_rows


def test_fit_erm_needs_weights(regression_pair):
    train, test, g_hat = regression_pair
    with pytest.raises(ErmArgumentError, match="needs importance weights"):
        fit_erm(ErmProblem(gaussian, mode="robust"), train, test, SplitPlan(12), None, g_hat)


def test_fit_erm_uses_kmm_rows_only(regression_pair):
    train, test, g_hat = regression_pair
    plan = SplitPlan(12, 0.5, reuse_full=False)
    fit = fit_erm(ErmProblem(gaussian, lam=0.1), train, test, plan, np.ones(6), g_hat)
    assert fit.n_span == 6 + test.n_rows


def test_fit_dict_round_trip(regression_pair):
    train, test, g_hat = regression_pair
    fit = fit_robust_least_squares(train, test, np.ones(12), g_hat, 0.05, gaussian)
    restored = ErmFit.from_dict(fit.to_dict())
    assert predict_erm(restored, test) == pytest.approx(predict_erm(fit, test))
    with pytest.raises(ErmArgumentError, match="features"):
        predict_erm(fit, np.zeros((2, 3)))


# Slope fits


def test_ols_and_weighted_slopes():
    train = Dataset([[1.0], [2.0], [3.0]], [2.0, 4.0, 6.0])
    assert fit_ols_slope(train) == pytest.approx(2.0)
    assert fit_weighted_slope(train, np.ones(3)) == pytest.approx(2.0)
    noisy = Dataset([[1.0], [2.0]], [1.0, 6.0])
    # weight only on the second point
    assert fit_weighted_slope(noisy, np.array([0.0, 1.0])) == pytest.approx(3.0)


def test_robust_slope_with_exact_regression():
    train = Dataset([[0.5], [1.0], [1.5]], [1.5, 3.0, 4.5])
    test = Dataset([[-0.2], [0.1], [0.4]], role="test")
    g_hat = FunctionPredictor(lambda x: 3.0 * x[:, 0], "linear")
    assert fit_robust_slope(train, test, np.ones(3), g_hat) == pytest.approx(3.0)


def test_slopes_need_one_feature():
    with pytest.raises(ErmArgumentError, match="one feature"):
        fit_ols_slope(Dataset(np.ones((3, 2)), [1.0, 2.0, 3.0]))


# Objective and gradient helpers


def central_difference(objective, alpha, h=1e-6):
    gradient = np.empty_like(alpha)
    for i in range(alpha.size):
        step = np.zeros_like(alpha)
        step[i] = h
        gradient[i] = (objective(alpha + step) - objective(alpha - step)) / (2.0 * h)
    return gradient


@pytest.fixture
def objective_pairs(regression_pair, classification_pair):
    """
    Fixture to provide (objective, gradient, dimension) triples for every
    public ERM objective on small random data.
    """
    rng = np.random.default_rng(3)
    train, test, g_hat = regression_pair
    beta = rng.uniform(0.0, 3.0, size=12)
    _, K_tot, w1, w2 = robust_blocks(train, test, beta, g_hat, gaussian)
    K_train = K_tot[:12, :12]
    c_train, c_test = classification_pair
    _, K_cls, v1, _ = robust_blocks(c_train, c_test, np.ones(6), ConstantPredictor(0.4), gaussian)
    g_test = rng.uniform(0.05, 0.95, size=4)
    labels = c_train.y
    K_labels = K_cls[:6, :6]
    beta_cls = rng.uniform(0.0, 2.0, size=6)
    return {
        "robust_squared": (
            lambda a: robust_squared_objective(a, K_tot, w1, w2, 12, 8, 0.05),
            lambda a: robust_squared_gradient(a, K_tot, w1, w2, 12, 8, 0.05),
            20,
        ),
        "robust_logistic": (
            lambda a: robust_logistic_objective(a, K_cls, v1, g_test, 6, 4, 0.01),
            lambda a: robust_logistic_gradient(a, K_cls, v1, g_test, 6, 4, 0.01),
            10,
        ),
        "kmm_squared": (
            lambda a: kmm_squared_objective(a, K_train, beta, train.y, 8, 0.05),
            lambda a: kmm_squared_gradient(a, K_train, beta, train.y, 8, 0.05),
            12,
        ),
        "kmm_logistic": (
            lambda a: kmm_logistic_objective(a, K_labels, beta_cls, labels, 0.01),
            lambda a: kmm_logistic_gradient(a, K_labels, beta_cls, labels, 0.01),
            6,
        ),
    }


@pytest.mark.parametrize("name", ["robust_squared", "robust_logistic", "kmm_squared", "kmm_logistic"])
def test_gradients_match_finite_differences(objective_pairs, name):
    objective, gradient, dim = objective_pairs[name]
    rng = np.random.default_rng(17)
    for _ in range(5):
        alpha = rng.standard_normal(dim)
        analytic = gradient(alpha)
        numeric = central_difference(objective, alpha)
        assert np.linalg.norm(numeric - analytic) <= 1e-5 * max(np.linalg.norm(analytic), 1.0)


@pytest.mark.parametrize("name", ["robust_logistic", "kmm_logistic"])
def test_logistic_objectives_are_midpoint_convex(objective_pairs, name):
    objective, _, dim = objective_pairs[name]
    rng = np.random.default_rng(23)
    for _ in range(100):
        a, b = 3.0 * rng.standard_normal((2, dim))
        assert objective(0.5 * (a + b)) <= 0.5 * (objective(a) + objective(b)) + 1e-12


def test_robust_fits_are_stationary(regression_pair, classification_pair):
    train, test, g_hat = regression_pair
    squared = fit_robust_least_squares(train, test, np.full(12, 0.8), g_hat, 0.1, gaussian)
    assert squared.grad_norm <= 1e-6
    c_train, c_test = classification_pair
    logistic = fit_robust_logistic(c_train, c_test, np.full(6, 1.2), ConstantPredictor(0.4), 0.05, gaussian)
    assert logistic.converged
    assert logistic.grad_norm <= 1e-6
