from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from .configs import ExperimentConfig, json_ready
from .constants import TABLE1_REFERENCE, TOY_DEFAULTS, ErmMode, LossType, ScenarioKind
from .datagen import (
    Gaussian10dProblem,
    KernelSectionProblem,
    biased_subsample,
    gen_toy1d,
    load_uci_breast_cancer,
    split_train_test,
)
from .dataset import Dataset
from .erm import (
    ErmProblem,
    fit_erm,
    fit_ols_slope,
    fit_robust_slope,
    fit_weighted_slope,
    misclassification_rate,
)
from .estimators import SplitPlan, estimate_all
from .kmm import kmm_weights
from .utilityfuncs import child_seeds, loglog_slope, make_rng, median_inversions, rng_name, seed_stream

logger = logging.getLogger(__name__)

TOY_METHODS = ("ols", "kmm", "robust")
ESTIMATORS = ("nr", "kmm", "r")
ORDERING_SLACK = 0.01
MAGNITUDE_RANGE = (0.5, 2.0)
ROBUST_ERROR_SLACK = 0.02
TOY_KMM_SLACK = 0.05
RATE_EXPONENT_LIMIT = -0.3
NO_SHIFT_TOLERANCE = 1e-6


class ExperimentError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


@dataclass
class ExperimentReport:
    kind: ScenarioKind
    config: Dict[str, object]
    records: List[Dict[str, object]]
    aggregates: Dict[str, object]
    checks: Dict[str, bool] = field(default_factory=dict)
    wall_clock: float = 0.0
    rng: str = field(default_factory=rng_name)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "config": self.config,
            "records": self.records,
            "aggregates": self.aggregates,
            "checks": self.checks,
            "wall_clock": self.wall_clock,
            "rng": self.rng,
        }

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> ExperimentReport:
        return cls(
            kind=ScenarioKind(values["kind"]),
            config=values["config"],
            records=list(values["records"]),
            aggregates=values["aggregates"],
            checks=dict(values.get("checks", {})),
            wall_clock=float(values.get("wall_clock", 0.0)),
            rng=values.get("rng", rng_name()),
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.records)

    def write_json(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(json_ready(self.to_dict()), handle, indent=2)
        logger.info("Wrote report to %s", path)

    def write_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, encoding="utf-8")
        logger.info("Wrote %d records to %s", len(self.records), path)


def _pinned(fn: Callable, args: Tuple) -> List[Dict[str, object]]:
    # one BLAS thread per replication keeps serial and parallel runs identical
    with threadpool_limits(limits=1):
        return fn(*args)


def run_replications(fn: Callable, tasks: Sequence[Tuple], n_jobs: int = 1) -> List[Dict[str, object]]:
    """
    Runs fn(*task) for every task and concatenates the returned record
    lists in task order.
    """
    if n_jobs == 1:
        batches = [_pinned(fn, task) for task in tasks]
    else:
        batches = Parallel(n_jobs=n_jobs)(delayed(_pinned)(fn, task) for task in tasks)
    return [record for batch in batches for record in batch]


def _summary(values) -> Dict[str, float]:
    array = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(np.mean(array)),
        "median": float(np.median(array)),
        "sd": float(np.std(array, ddof=1)) if array.size > 1 else 0.0,
        "count": int(array.size),
    }


# Toy slope experiment


def _toy_replication(cfg: ExperimentConfig, index: int, seed: int) -> List[Dict[str, object]]:
    scenario = cfg.scenario
    n_tr, n_te = scenario.sizes[0]
    noise_sd = TOY_DEFAULTS["noise_sd"] if scenario.noise_sd is None else scenario.noise_sd
    train, test, _ = gen_toy1d(
        n_tr,
        n_te,
        seed,
        noise_sd=noise_sd,
        shift=scenario.shift,
        share_covariates=bool(scenario.extra.get("share_covariates", False)),
    )
    plan = SplitPlan(n_tr, cfg.split.rho, cfg.split.reuse_full)
    kmm_part = train.subset(plan.kmm_indices)
    weights = kmm_weights(kmm_part.without_labels(), test, cfg.kmm_config())
    g_hat = cfg.ghat_fitter().fit(train.subset(plan.nr_indices), n_te)
    return [
        {
            "replication": index,
            "seed": seed,
            "n_tr": n_tr,
            "n_te": n_te,
            "slope_ols": fit_ols_slope(train),
            "slope_kmm": fit_weighted_slope(kmm_part, weights),
            "slope_robust": fit_robust_slope(kmm_part, test, weights, g_hat),
            # density-ratio baseline slot, not implemented
            "slope_density_ratio": None,
            "l_hat": weights.l_hat,
            "kmm_converged": weights.converged,
        }
    ]


def run_toy_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Fits the slope of y = s x (intercept known to be 0) by OLS, KMM-weighted
    least squares and the robust corrected risk over seeded trials.
    """
    return _run(cfg, ScenarioKind.TOY1D, _toy_tasks, _toy_replication)


def _toy_tasks(cfg: ExperimentConfig) -> List[Tuple]:
    seeds = seed_stream(cfg.base_seed, cfg.replications)
    return [(cfg, i, seed) for i, seed in enumerate(seeds)]


def _toy_aggregates(records: List[Dict[str, object]], config: Dict[str, object]) -> Dict[str, object]:
    frame = pd.DataFrame.from_records(records)
    best = TOY_DEFAULTS["best_slope"]
    methods = {}
    for method in TOY_METHODS:
        summary = _summary(frame[f"slope_{method}"])
        summary["median_abs_error"] = abs(summary["median"] - best)
        summary["mean_abs_error"] = float(np.mean(np.abs(frame[f"slope_{method}"].to_numpy() - best)))
        methods[method] = summary
    spread = (frame[[f"slope_{m}" for m in TOY_METHODS]].max(axis=1) - frame[[f"slope_{m}" for m in TOY_METHODS]].min(axis=1))
    return {"best_slope": best, "methods": methods, "max_method_spread": float(spread.max())}


def _toy_checks(report: ExperimentReport) -> Dict[str, bool]:
    methods = report.aggregates["methods"]
    scenario = report.config["scenario"]
    if not scenario.get("shift", True):
        if scenario.get("extra", {}).get("share_covariates", False):
            return {"no_shift_agreement": report.aggregates["max_method_spread"] <= NO_SHIFT_TOLERANCE}
        errors = [methods[m]["median_abs_error"] for m in TOY_METHODS]
        return {"no_shift_similar": max(errors) - min(errors) <= TOY_KMM_SLACK}
    return {
        "robust_beats_ols": methods["robust"]["median_abs_error"] < methods["ols"]["median_abs_error"],
        "robust_close_to_kmm": methods["robust"]["median_abs_error"]
        <= methods["kmm"]["median_abs_error"] + TOY_KMM_SLACK,
    }


# Mean estimation on the multivariate Gaussian simulation


def _table1_problem(cfg: ExperimentConfig) -> Gaussian10dProblem:
    scenario = cfg.scenario
    extra = scenario.extra
    return Gaussian10dProblem(
        problem_seed=scenario.problem_seed,
        dim=int(extra.get("dim", 10)),
        noise_sd=scenario.noise_sd,
        mean_scale=float(extra.get("mean_scale", 1.0)),
        a_scale=float(extra.get("a_scale", 1.0)),
        c1=scenario.c1,
        c2=scenario.c2,
        shift=scenario.shift,
    )


def _table1_replication(
    cfg: ExperimentConfig, problem: Gaussian10dProblem, nu: float, n_tr: int, n_te: int, index: int, seed: int
) -> List[Dict[str, object]]:
    train, test = problem.sample(n_tr, n_te, seed)
    plan = SplitPlan(n_tr, cfg.split.rho, cfg.split.reuse_full)
    kmm_cfg = cfg.kmm_config()
    weights = kmm_weights(train.subset(plan.kmm_indices).without_labels(), test, kmm_cfg)
    lambdas = cfg.lasso_lambdas or (None,)
    records = []
    for lam in lambdas:
        report = estimate_all(train, test, plan, kmm_cfg, cfg.ghat_fitter(lam), weights)
        records.append(
            {
                "lambda": lam,
                "n_tr": n_tr,
                "n_te": n_te,
                "replication": index,
                "seed": seed,
                "nu": nu,
                "v_nr": report.v_nr,
                "v_kmm": report.v_kmm,
                "v_r": report.v_r,
                "sq_err_nr": (report.v_nr - nu) ** 2,
                "sq_err_kmm": (report.v_kmm - nu) ** 2,
                "sq_err_r": (report.v_r - nu) ** 2,
                "l_hat": weights.l_hat,
                "kmm_converged": weights.converged,
            }
        )
    return records


def _table1_tasks(cfg: ExperimentConfig) -> List[Tuple]:
    problem = _table1_problem(cfg)
    nu = problem.nu_oracle(cfg.oracle_samples, cfg.oracle_seed)
    logger.info("table1: nu_oracle = %.6f from %d samples", nu, cfg.oracle_samples)
    seeds = seed_stream(cfg.base_seed, cfg.replications)
    return [
        (cfg, problem, nu, n_tr, n_te, i, seed)
        for n_tr, n_te in cfg.scenario.sizes
        for i, seed in enumerate(seeds)
    ]


def run_table1(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Average squared error of V_NR, V_KMM and V_R against the Monte Carlo
    target over the (lambda, n_tr, n_te) grid.
    """
    return _run(cfg, ScenarioKind.GAUSSIAN10D, _table1_tasks, _table1_replication)


def _table1_aggregates(records: List[Dict[str, object]], config: Dict[str, object]) -> Dict[str, object]:
    frame = pd.DataFrame.from_records(records)
    cells = []
    for (lam, n_tr, n_te), group in frame.groupby(["lambda", "n_tr", "n_te"], sort=False, dropna=False):
        lam_value = None if lam is None or (isinstance(lam, float) and math.isnan(lam)) else float(lam)
        reference = TABLE1_REFERENCE.get((lam_value, int(n_tr), int(n_te)))
        cell = {"lambda": lam_value, "n_tr": int(n_tr), "n_te": int(n_te), "count": int(len(group))}
        for name in ESTIMATORS:
            cell[f"mse_{name}"] = float(np.mean(group[f"sq_err_{name}"].to_numpy()))
            cell[f"mean_{name}"] = float(np.mean(group[f"v_{name}"].to_numpy()))
        for name, value in zip(ESTIMATORS, reference or (None, None, None)):
            cell[f"reference_{name}"] = value
        cells.append(cell)
    return {"cells": cells}


def _table1_checks(report: ExperimentReport) -> Dict[str, bool]:
    cells = report.aggregates["cells"]
    ordered = sum(
        1 for c in cells if c["mse_r"] <= min(c["mse_kmm"], c["mse_nr"]) + ORDERING_SLACK
    )
    checks = {"ordering": ordered >= max(len(cells) - 1, 1)}
    referenced = [c for c in cells if c["reference_r"] is not None]
    if referenced:
        low, high = MAGNITUDE_RANGE
        checks["magnitude"] = all(
            low * c[f"reference_{name}"] <= c[f"mse_{name}"] <= high * c[f"reference_{name}"]
            for c in referenced
            for name in ESTIMATORS
        )
    return checks


# Classification under biased sampling on the UCI data


def _uci_replication(cfg: ExperimentConfig, data: Dataset, fraction: float, index: int, seed: int) -> List[Dict[str, object]]:
    split_seed, subsample_seed = child_seeds(seed, 2)
    train_full, test = split_train_test(data, fraction, split_seed)
    sigma1 = cfg.scenario.sigma1 if cfg.scenario.sigma1 is not None else 0.0
    train = biased_subsample(train_full, sigma1, subsample_seed)
    covariates = test.without_labels()
    plan = SplitPlan(train.n_rows, cfg.split.rho, cfg.split.reuse_full)
    weights = kmm_weights(train.subset(plan.kmm_indices).without_labels(), covariates, cfg.kmm_config())
    g_hat = cfg.ghat_fitter().fit(train.subset(plan.nr_indices), covariates.n_rows)
    records = []
    for loss in cfg.erm.losses:
        for mode in cfg.erm.modes:
            problem = ErmProblem(cfg.kernel, LossType(loss), cfg.erm.lam, ErmMode(mode), cfg.erm.tol, cfg.erm.max_iter)
            fit = fit_erm(problem, train, covariates, plan, weights, g_hat)
            records.append(
                {
                    "train_fraction": fraction,
                    "loss": loss,
                    "mode": mode,
                    "replication": index,
                    "seed": seed,
                    "n_tr": train.n_rows,
                    "n_te": covariates.n_rows,
                    "test_error": misclassification_rate(fit, test),
                    "converged": fit.converged,
                }
            )
    return records


def _uci_tasks(cfg: ExperimentConfig) -> List[Tuple]:
    if not cfg.scenario.data_path:
        raise ExperimentError("run_uci_experiment: scenario.data_path must name the UCI data file")
    data = load_uci_breast_cancer(cfg.scenario.data_path, cfg.scenario.layout)
    seeds = seed_stream(cfg.base_seed, cfg.replications)
    return [
        (cfg, data, fraction, i, seed)
        for fraction in cfg.scenario.train_fractions
        for i, seed in enumerate(seeds)
    ]


def run_uci_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Test error of unweighted, KMM-weighted and robust ERM for both losses
    over the training proportions.
    """
    return _run(cfg, ScenarioKind.UCI_BIAS, _uci_tasks, _uci_replication)


def _uci_aggregates(records: List[Dict[str, object]], config: Dict[str, object]) -> Dict[str, object]:
    frame = pd.DataFrame.from_records(records)
    cells = []
    for (fraction, loss, mode), group in frame.groupby(["train_fraction", "loss", "mode"], sort=False):
        summary = _summary(group["test_error"])
        cells.append({"train_fraction": float(fraction), "loss": loss, "mode": mode, **summary})
    return {"cells": cells}


def _uci_checks(report: ExperimentReport) -> Dict[str, bool]:
    cells = report.aggregates["cells"]
    checks = {"errors_in_range": all(0.0 <= r["test_error"] <= 1.0 for r in report.records)}
    means = {(c["train_fraction"], c["loss"], c["mode"]): c["mean"] for c in cells}
    robust = ErmMode.ROBUST.value
    comparisons = []
    for (fraction, loss, mode), value in means.items():
        if mode != robust:
            continue
        others = [
            means[(fraction, loss, other)]
            for other in (ErmMode.UNWEIGHTED_NR.value, ErmMode.KMM_WEIGHTED.value)
            if (fraction, loss, other) in means
        ]
        if others:
            comparisons.append(value <= max(others) + ROBUST_ERROR_SLACK)
    if comparisons:
        checks["robust_not_worse"] = all(comparisons)
    return checks


# Empirical error-rate trend


def _rate_problem(cfg: ExperimentConfig) -> KernelSectionProblem:
    extra = cfg.scenario.extra
    return KernelSectionProblem(
        center=float(extra.get("center", 0.25)),
        bandwidth=float(extra.get("bandwidth", 1.0)),
        noise_sd=cfg.scenario.noise_sd if cfg.scenario.noise_sd is not None else 0.1,
    )


def _rate_replication(
    cfg: ExperimentConfig, problem: KernelSectionProblem, n_tr: int, n_te: int, index: int, seed: int
) -> List[Dict[str, object]]:
    nu = problem.nu()
    train, test = problem.sample(n_tr, n_te, seed)
    plan = SplitPlan(n_tr, cfg.split.rho, cfg.split.reuse_full)
    report = estimate_all(train, test, plan, cfg.kmm_config(), cfg.ghat_fitter())
    return [
        {
            "n_tr": n_tr,
            "n_te": n_te,
            "replication": index,
            "seed": seed,
            "nu": nu,
            "v_nr": report.v_nr,
            "v_kmm": report.v_kmm,
            "v_r": report.v_r,
            "abs_err_nr": abs(report.v_nr - nu),
            "abs_err_kmm": abs(report.v_kmm - nu),
            "abs_err_r": abs(report.v_r - nu),
            "gamma": report.gamma,
        }
    ]


def _rate_tasks(cfg: ExperimentConfig) -> List[Tuple]:
    problem = _rate_problem(cfg)
    seeds = seed_stream(cfg.base_seed, cfg.replications)
    return [
        (cfg, problem, n_tr, n_te, i, seed)
        for n_tr, n_te in cfg.scenario.sizes
        for i, seed in enumerate(seeds)
    ]


def run_rate_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Median absolute error of the three estimators against n and its
    log-log slope. An empirical trend check, not a proof of the rate.
    """
    return _run(cfg, ScenarioKind.RATE_SWEEP, _rate_tasks, _rate_replication)


def bootstrap_slope_interval(
    sizes: Sequence[int], errors_by_size: Sequence[np.ndarray], resamples: int, seed: int
) -> Tuple[float, float]:
    """
    Percentile 95% interval of the log-log slope of the median error,
    resampling replications within each size.
    """
    if resamples < 1:
        return (math.nan, math.nan)
    rng = make_rng(seed)
    medians = np.empty((len(sizes), resamples))
    for row, errors in enumerate(errors_by_size):
        errors = np.asarray(errors, dtype=np.float64)
        draws = rng.integers(0, errors.size, size=(resamples, errors.size))
        medians[row] = np.median(errors[draws], axis=1)
    slopes = np.polyfit(np.log(np.asarray(sizes, dtype=np.float64)), np.log(medians), 1)[0]
    low, high = np.percentile(slopes, [2.5, 97.5])
    return float(low), float(high)


def _rate_aggregates(records: List[Dict[str, object]], config: Dict[str, object]) -> Dict[str, object]:
    frame = pd.DataFrame.from_records(records)
    sizes = []
    cells = []
    errors_r = []
    for n_tr, group in frame.groupby("n_tr", sort=True):
        sizes.append(int(n_tr))
        cell = {"n": int(n_tr), "count": int(len(group))}
        for name in ESTIMATORS:
            cell[f"median_abs_err_{name}"] = float(np.median(group[f"abs_err_{name}"].to_numpy()))
        errors_r.append(group["abs_err_r"].to_numpy())
        cells.append(cell)

    slopes = {}
    for name in ESTIMATORS:
        medians = [c[f"median_abs_err_{name}"] for c in cells]
        slopes[name] = loglog_slope(sizes, medians) if len(sizes) > 1 and min(medians) > 0 else None
    low, high = (math.nan, math.nan)
    if len(sizes) > 1:
        low, high = bootstrap_slope_interval(
            sizes, errors_r, int(config.get("bootstrap", 0)), int(config.get("base_seed", 0))
        )
    return {
        "cells": cells,
        "slopes": slopes,
        "slope_r_interval": [low, high],
        "inversions_r": median_inversions([c["median_abs_err_r"] for c in cells]),
    }


def _rate_checks(report: ExperimentReport) -> Dict[str, bool]:
    aggregates = report.aggregates
    slope = aggregates["slopes"]["r"]
    return {
        "errors_positive": all(c["median_abs_err_r"] > 0 for c in aggregates["cells"]),
        "median_error_trend": aggregates["inversions_r"] <= 1,
        "rate_exponent": slope is not None and slope <= RATE_EXPONENT_LIMIT,
    }


# Dispatch

_AGGREGATORS = {
    ScenarioKind.TOY1D: _toy_aggregates,
    ScenarioKind.GAUSSIAN10D: _table1_aggregates,
    ScenarioKind.UCI_BIAS: _uci_aggregates,
    ScenarioKind.RATE_SWEEP: _rate_aggregates,
}

_CHECKERS = {
    ScenarioKind.TOY1D: _toy_checks,
    ScenarioKind.GAUSSIAN10D: _table1_checks,
    ScenarioKind.UCI_BIAS: _uci_checks,
    ScenarioKind.RATE_SWEEP: _rate_checks,
}


def recompute_aggregates(
    kind: Union[ScenarioKind, str], records: List[Dict[str, object]], config: Optional[Dict[str, object]] = None
) -> Dict[str, object]:
    """
    Rebuilds the aggregates of a report from its per-replication records.
    """
    kind = ScenarioKind(kind) if isinstance(kind, str) else kind
    if not records:
        raise ExperimentError("recompute_aggregates: no records")
    return _AGGREGATORS[kind](records, config or {})


def check_report(report: ExperimentReport) -> Dict[str, bool]:
    """
    Evaluates the named acceptance properties of a report.
    """
    return {name: bool(value) for name, value in _CHECKERS[report.kind](report).items()}


def _run(cfg: ExperimentConfig, kind: ScenarioKind, make_tasks: Callable, replication: Callable) -> ExperimentReport:
    if cfg.kind != kind:
        raise ExperimentError(f"{kind.value} runner received a '{cfg.kind.value}' configuration")
    start = time.perf_counter()
    tasks = make_tasks(cfg)
    logger.info("%s: %d replication tasks on %d worker(s)", kind.value, len(tasks), cfg.n_jobs)
    records = [_plain_record(record) for record in run_replications(replication, tasks, cfg.n_jobs)]
    config = cfg.to_dict()
    report = ExperimentReport(
        kind=kind,
        config=config,
        records=records,
        aggregates=recompute_aggregates(kind, records, config),
    )
    report.checks = check_report(report)
    report.wall_clock = time.perf_counter() - start
    logger.info("%s: finished in %.1f s, checks %s", kind.value, report.wall_clock, report.checks)
    return report


def _plain_record(record: Dict[str, object]) -> Dict[str, object]:
    plain = {}
    for key, value in record.items():
        if isinstance(value, (np.bool_, bool)):
            plain[key] = bool(value)
        elif isinstance(value, (np.integer, int)):
            plain[key] = int(value)
        elif isinstance(value, (np.floating, float)):
            plain[key] = float(value)
        else:
            plain[key] = value
    return plain


RUNNERS = {
    ScenarioKind.TOY1D: run_toy_experiment,
    ScenarioKind.GAUSSIAN10D: run_table1,
    ScenarioKind.UCI_BIAS: run_uci_experiment,
    ScenarioKind.RATE_SWEEP: run_rate_sweep,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[cfg.kind](cfg)
