# tests/test_datagen.py

import math
from pathlib import Path

import numpy as np
import pytest

from src.constants import TOY_DEFAULTS, DatasetRole, ScenarioKind
from src.dataset import Dataset
from src.datagen import (
    DatagenArgumentError,
    DatagenFormatError,
    EmptySubsampleError,
    ExperimentScenario,
    Gaussian10dProblem,
    GaussianSpec,
    KernelSectionProblem,
    biased_subsample,
    gen_gaussian10d,
    gen_toy1d,
    load_uci_breast_cancer,
    split_train_test,
    toy_regression,
    toy_test_spec,
    toy_train_spec,
)
from src.estimators import true_density_ratio

DATA_DIR = Path(__file__).parent / "data"


# Gaussian specs


def test_gaussian_spec_shapes():
    spec = GaussianSpec([0.0, 1.0], np.eye(2))
    assert spec.dim == 2
    assert spec.sample(np.random.default_rng(0), 7).shape == (7, 2)
    assert GaussianSpec.univariate(0.5, 0.5).covariance.tolist() == [[0.25]]


@pytest.mark.parametrize(
    "mean, covariance, message",
    [
        ([0.0, 0.0], np.eye(3), "covariance shape"),
        ([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], "not symmetric"),
        ([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]], "not positive definite"),
    ],
)
def test_invalid_gaussian_spec(mean, covariance, message):
    with pytest.raises(DatagenArgumentError, match=message):
        GaussianSpec(mean, covariance)


def test_gaussian_spec_copies_inputs():
    mean = np.array([1.0])
    spec = GaussianSpec(mean, [[1.0]])
    mean[0] = 5.0
    assert spec.mean.tolist() == [1.0]


# Toy problem


def test_toy_regression():
    assert toy_regression(np.array([[0.0], [1.0], [2.0]])).tolist() == [0.0, 0.0, 6.0]


def test_gen_toy1d_shapes_and_roles():
    train, test, test_labels = gen_toy1d(25, 40, seed=1)
    assert train.n_rows == 25 and train.has_labels
    assert test.n_rows == 40 and test.role == DatasetRole.TEST and not test.has_labels
    assert test_labels.shape == (40,)


def test_gen_toy1d_is_reproducible():
    first = gen_toy1d(10, 10, seed=3)
    second = gen_toy1d(10, 10, seed=3)
    assert first[0] == second[0]
    assert np.array_equal(first[2], second[2])
    assert not np.array_equal(gen_toy1d(10, 10, seed=4)[0].X, first[0].X)


def test_gen_toy1d_noise_free_labels():
    train, test, test_labels = gen_toy1d(20, 20, seed=2, noise_sd=0.0)
    assert train.y == pytest.approx(toy_regression(train.X))
    assert test_labels == pytest.approx(toy_regression(test.X))


def test_gen_toy1d_shift_moves_test_covariates():
    _, shifted, _ = gen_toy1d(10, 4000, seed=6)
    _, unshifted, _ = gen_toy1d(10, 4000, seed=6, shift=False)
    assert abs(shifted.X.mean()) < 0.05
    assert abs(unshifted.X.mean() - 0.5) < 0.05
    assert shifted.X.std() == pytest.approx(0.3, abs=0.02)


def test_gen_toy1d_shared_covariates():
    train, test, _ = gen_toy1d(15, 15, seed=9, share_covariates=True)
    assert np.array_equal(train.X, test.X)
    with pytest.raises(DatagenArgumentError, match="n_te == n_tr"):
        gen_toy1d(15, 10, seed=9, share_covariates=True)


def test_gen_toy1d_marginal_moments():
    train, test, _ = gen_toy1d(100_000, 100_000, seed=8)
    assert train.X[:, 0].mean() == pytest.approx(TOY_DEFAULTS["train_mean"], abs=0.01)
    assert train.X[:, 0].std() == pytest.approx(TOY_DEFAULTS["train_sd"], abs=0.01)
    assert test.X[:, 0].mean() == pytest.approx(TOY_DEFAULTS["test_mean"], abs=0.01)
    assert test.X[:, 0].std() == pytest.approx(TOY_DEFAULTS["test_sd"], abs=0.01)


def test_toy_best_linear_slope_under_test_distribution():
    """
    Cov(x, -x + x^3) / Var(x) = -1 + 3 sd^2 for a centred Gaussian.
    """
    assert -1.0 + 3.0 * TOY_DEFAULTS["test_sd"] ** 2 == pytest.approx(TOY_DEFAULTS["best_slope"])
    _, test, labels = gen_toy1d(10, 200_000, seed=9, noise_sd=0.0)
    slope = np.polyfit(test.X[:, 0], labels, 1)[0]
    assert slope == pytest.approx(TOY_DEFAULTS["best_slope"], abs=0.005)


def test_true_weights_average_to_one_under_training_distribution():
    train, _, _ = gen_toy1d(200_000, 1, seed=10)
    beta = true_density_ratio(toy_train_spec(), toy_test_spec(), train.X)
    assert beta.mean() == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("n_tr, n_te", [(0, 5), (5, 0)])
def test_gen_toy1d_rejects_empty_sizes(n_tr, n_te):
    with pytest.raises(DatagenArgumentError, match="sample sizes"):
        gen_toy1d(n_tr, n_te, seed=0)


# Multivariate Gaussian problem


def test_gaussian10d_problem_is_fixed_by_its_seed():
    first = Gaussian10dProblem(problem_seed=11)
    second = Gaussian10dProblem(problem_seed=11)
    assert first.to_dict() == second.to_dict()
    assert first.dim == 10
    assert Gaussian10dProblem(problem_seed=12).c1 != first.c1


def test_gaussian10d_regression_with_fixed_coefficients():
    problem = Gaussian10dProblem(problem_seed=1, dim=2, c1=0.5, c2=[1.0, -1.0])
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    expected = [0.5, math.sin(1.0) + 0.5]
    assert problem.regression(X) == pytest.approx(expected)
    with pytest.raises(DatagenArgumentError, match="length 2"):
        Gaussian10dProblem(problem_seed=1, dim=2, c2=[1.0])


def test_gaussian10d_without_shift():
    problem = Gaussian10dProblem(problem_seed=5, dim=3, shift=False)
    assert problem.test_spec is problem.train_spec


def test_gen_gaussian10d():
    problem = Gaussian10dProblem(problem_seed=7, dim=3)
    train, test, nu = gen_gaussian10d(30, 20, seed=1, problem=problem, oracle_samples=2000)
    assert train.X.shape == (30, 3) and test.X.shape == (20, 3)
    assert nu == problem.nu_oracle(2000)
    # sin term in [-1, 1], logistic term in (0, 1)
    assert -1.0 <= nu <= 2.0


def test_nu_oracle_is_cached_per_seed():
    problem = Gaussian10dProblem(problem_seed=3, dim=2)
    assert problem.nu_oracle(5000, 1) == problem.nu_oracle(5000, 1)
    assert problem.nu_oracle(5000, 1) != problem.nu_oracle(5000, 2)


# Kernel section problem


def test_kernel_section_nu_matches_monte_carlo():
    problem = KernelSectionProblem()
    rng = np.random.default_rng(0)
    draws = problem.test_spec.sample(rng, 400_000)
    assert problem.nu() == pytest.approx(float(np.mean(problem.regression(draws))), abs=3e-3)


def test_kernel_section_regression_peaks_at_center():
    problem = KernelSectionProblem(center=0.25, bandwidth=2.0)
    assert problem.regression(np.array([[0.25], [1.25]])).tolist() == pytest.approx([1.0, math.exp(-2.0)])
    with pytest.raises(DatagenArgumentError, match="bandwidth"):
        KernelSectionProblem(bandwidth=0.0)


# Subsampling and splits


def test_biased_subsample_keeps_the_closest_row():
    data = Dataset([[0.0], [0.1], [-0.1], [5.0], [-5.0]], [0.0, 1.0, 0.0, 1.0, 0.0])
    kept = biased_subsample(data, sigma1=50.0, seed=0)
    assert 0.0 in kept.X[:, 0].tolist()
    assert 5.0 not in kept.X[:, 0].tolist()


def test_biased_subsample_prefers_rows_near_the_mean():
    x = np.random.default_rng(12).standard_normal(2000)
    data = Dataset(x[:, None], np.zeros(2000))
    kept = biased_subsample(data, 1.0, seed=13).X[:, 0]
    rejected = x[~np.isin(x, kept)]
    assert 0 < kept.size < x.size
    centre = x.mean()
    assert np.abs(kept - centre).mean() < np.abs(rejected - centre).mean()


def test_biased_subsample_zero_sigma_keeps_everything():
    data = Dataset(np.arange(10.0), np.zeros(10))
    assert biased_subsample(data, sigma1=0.0, seed=4) == data


def test_biased_subsample_negative_sigma_warns(caplog):
    data = Dataset(np.arange(10.0), np.zeros(10))
    biased_subsample(data, sigma1=-0.5, seed=4)
    assert "favours rows far from the mean" in caplog.text


def test_biased_subsample_rejects_non_finite_sigma():
    with pytest.raises(DatagenArgumentError):
        biased_subsample(Dataset([1.0, 2.0], [0.0, 1.0]), sigma1=math.inf, seed=0)


def test_empty_subsample_error_message():
    assert "rejected every row" in str(EmptySubsampleError(3.0))


def test_split_train_test_is_disjoint():
    data = Dataset(np.arange(20.0), np.arange(20.0) % 2)
    train, test = split_train_test(data, 0.3, seed=8)
    assert train.n_rows == 6 and test.n_rows == 14
    assert set(train.X[:, 0]) | set(test.X[:, 0]) == set(range(20))
    assert not set(train.X[:, 0]) & set(test.X[:, 0])
    assert test.role == DatasetRole.TEST and test.labels_heldout


@pytest.mark.parametrize("fraction", [0.0, 1.0, 0.01])
def test_split_train_test_rejects_empty_parts(fraction):
    with pytest.raises(DatagenArgumentError):
        split_train_test(Dataset(np.arange(20.0), np.zeros(20)), fraction, seed=0)


# UCI loading


def test_load_uci_original():
    data = load_uci_breast_cancer(DATA_DIR / "uci_original.data")
    assert data.n_rows == 39 and data.n_features == 9
    assert int(data.y.sum()) == 12
    assert data.X.mean(axis=0) == pytest.approx(np.zeros(9), abs=1e-12)


def test_load_uci_original_logs_dropped_rows(caplog):
    load_uci_breast_cancer(DATA_DIR / "uci_original.data")
    assert "dropped 1 rows" in caplog.text


def test_load_uci_diagnostic():
    data = load_uci_breast_cancer(DATA_DIR / "uci_diagnostic.data", layout="diagnostic")
    assert data.n_rows == 4 and data.n_features == 30
    assert data.y.tolist() == [1.0, 1.0, 0.0, 0.0]


def test_load_uci_wrong_layout():
    with pytest.raises(DatagenFormatError, match="expected 32 columns"):
        load_uci_breast_cancer(DATA_DIR / "uci_original_small.data", layout="diagnostic")
    with pytest.raises(DatagenArgumentError, match="unknown layout"):
        load_uci_breast_cancer(DATA_DIR / "uci_original_small.data", layout="other")


def test_load_uci_missing_file(tmp_path):
    with pytest.raises(DatagenFormatError):
        load_uci_breast_cancer(tmp_path / "missing.data")


# Scenarios


def test_scenario_normalizes_fields():
    scenario = ExperimentScenario("toy", sizes=[[100, 200]], train_fractions=[0.5])
    assert scenario.kind == ScenarioKind.TOY1D
    assert scenario.sizes == ((100, 200),)
    assert scenario.to_dict()["sizes"] == [[100, 200]]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"sizes": [(0, 10)]},
        {"train_fractions": [1.0]},
        {"problem_seed": None},
        {"noise_sd": -1.0},
        {"layout": "other"},
    ],
)
def test_invalid_scenarios(kwargs):
    with pytest.raises(DatagenArgumentError):
        ExperimentScenario(ScenarioKind.UCI_BIAS, **kwargs)
