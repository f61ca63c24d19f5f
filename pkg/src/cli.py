from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .configs import ConfigError, json_ready, load_config
from .constants import (
    KMM_DEFAULTS,
    DatasetRole,
    ErmMode,
    GammaRule,
    GHatKind,
    KernelFamily,
    LossType,
    ScenarioKind,
    UCI_LAMBDA,
)
from .datagen import DatagenError, Gaussian10dProblem, KernelSectionProblem, gen_toy1d
from .dataset import Dataset, DatasetError
from .erm import ErmError, ErmProblem, classify_erm, fit_erm, misclassification_rate, predict_erm, predict_proba_erm
from .estimators import EstimatorError, SplitPlan, estimate_all
from .experiments import ExperimentError, run_experiment
from .kernels import KernelError, KernelSpec
from .kmm import KmmConfig, KmmError, kmm_weights
from .qp import QpError
from .ridge import GammaSchedule, GHatFitter, RidgeError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

PACKAGE_ERRORS = (
    ConfigError,
    DatagenError,
    DatasetError,
    ErmError,
    EstimatorError,
    ExperimentError,
    KernelError,
    KmmError,
    QpError,
    RidgeError,
)

GENERATORS = ("toy", "table1", "rates")


def _add_kernel_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("kernel")
    group.add_argument("--kernel", choices=[f.value for f in KernelFamily], default=KernelFamily.GAUSSIAN.value)
    group.add_argument("--sigma", type=float, default=1.0, help="Gaussian bandwidth")
    group.add_argument("--degree", type=int, default=3, help="polynomial degree")
    group.add_argument("--offset", type=float, default=1.0, help="polynomial offset")


def _add_kmm_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("weights")
    group.add_argument("--B", type=float, default=KMM_DEFAULTS["B"], help="upper bound on each weight")
    group.add_argument("--epsilon", type=float, default=None, help="band half-width (default (sqrt(n)-1)/sqrt(n))")
    group.add_argument("--no-band", action="store_true", help="drop the sum constraint")


def _add_ghat_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("regression fit")
    group.add_argument("--ghat", choices=[k.value for k in GHatKind], default=GHatKind.KERNEL_RIDGE.value)
    group.add_argument("--gamma-rule", choices=[r.value for r in GammaRule], default=GammaRule.INVERSE_NTR.value)
    group.add_argument("--theta", type=float, default=1.0)
    group.add_argument("--gamma", type=float, default=None, help="value for --gamma-rule fixed")
    group.add_argument("--lasso-lambda", type=float, default=0.1)


def _add_split_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("split")
    group.add_argument("--rho", type=float, default=None)
    group.add_argument("--split", action="store_true", help="disjoint KMM / regression parts instead of reusing all rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covshift",
        description="Covariate-shift correction: KMM weights, robust mean estimation and reweighted ERM.",
    )
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    weights = commands.add_parser("weights", help="estimate KMM importance weights")
    weights.add_argument("--train", required=True, help="training CSV")
    weights.add_argument("--test", required=True, help="test CSV")
    weights.add_argument("--out", required=True, help="weights CSV; diagnostics go to a .json sidecar")
    _add_kernel_arguments(weights)
    _add_kmm_arguments(weights)

    estimate = commands.add_parser("estimate", help="estimate the test mean response")
    estimate.add_argument("--train", required=True)
    estimate.add_argument("--test", required=True)
    estimate.add_argument("--out", required=True, help="report JSON")
    _add_kernel_arguments(estimate)
    _add_kmm_arguments(estimate)
    _add_ghat_arguments(estimate)
    _add_split_arguments(estimate)

    erm = commands.add_parser("erm", help="fit a shift-corrected predictor")
    erm.add_argument("--mode", choices=[m.value for m in ErmMode], default=ErmMode.ROBUST.value)
    erm.add_argument("--loss", choices=[l.value for l in LossType], default=LossType.SQUARED.value)
    erm.add_argument("--lambda", dest="lam", type=float, default=UCI_LAMBDA)
    erm.add_argument("--train", required=True)
    erm.add_argument("--test", required=True)
    erm.add_argument("--out", required=True, help="fit JSON")
    erm.add_argument("--predict", default=None, help="write test predictions to this CSV")
    _add_kernel_arguments(erm)
    _add_kmm_arguments(erm)
    _add_ghat_arguments(erm)
    _add_split_arguments(erm)

    datagen = commands.add_parser("datagen", help="write a synthetic train/test pair")
    datagen.add_argument("kind", choices=GENERATORS)
    datagen.add_argument("--n-tr", type=int, required=True)
    datagen.add_argument("--n-te", type=int, required=True)
    datagen.add_argument("--seed", type=int, required=True)
    datagen.add_argument("--out-dir", required=True)
    datagen.add_argument("--no-shift", action="store_true", help="draw test covariates from the training law")

    experiment = commands.add_parser("experiment", help="run a benchmark experiment")
    experiment.add_argument("kind", choices=[k.value for k in ScenarioKind])
    experiment.add_argument("--config", default=None, help="JSON overrides of the defaults")
    experiment.add_argument("--out", required=True, help="report JSON")
    experiment.add_argument("--csv", default=None, help="tidy per-replication CSV")
    experiment.add_argument("--seed", type=int, default=None, help="overrides base_seed")
    experiment.add_argument("--jobs", type=int, default=None, help="overrides n_jobs")
    experiment.add_argument("--check", action="store_true", help="exit 2 when an acceptance check fails")
    return parser


def _kernel(args: argparse.Namespace) -> KernelSpec:
    if args.kernel == KernelFamily.GAUSSIAN.value:
        return KernelSpec.gaussian(args.sigma)
    return KernelSpec.polynomial(args.degree, args.offset)


def _kmm_config(args: argparse.Namespace, kernel: KernelSpec) -> KmmConfig:
    return KmmConfig(kernel, B=args.B, epsilon=args.epsilon, include_band=not args.no_band)


def _fitter(args: argparse.Namespace, kernel: KernelSpec) -> GHatFitter:
    if args.ghat == GHatKind.LASSO_LINEAR.value:
        return GHatFitter.lasso(args.lasso_lambda)
    schedule = GammaSchedule(GammaRule(args.gamma_rule), theta=args.theta, fixed_value=args.gamma)
    return GHatFitter.kernel_ridge(kernel, schedule)


def _read_test(path: str) -> Dataset:
    # labels in a test file are kept for error reporting only
    return Dataset.from_csv(path, role=DatasetRole.TEST, labels_heldout=True)


def _write_json(values, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(json_ready(values), handle, indent=2)
    logger.info("Wrote %s", path)


def cmd_weights(args: argparse.Namespace) -> int:
    kernel = _kernel(args)
    train = Dataset.from_csv(args.train).without_labels()
    test = _read_test(args.test).without_labels()
    weights = kmm_weights(train, test, _kmm_config(args, kernel))
    weights.to_frame().to_csv(args.out, index=False, encoding="utf-8")
    logger.info("Wrote %d weights to %s", weights.n, args.out)
    _write_json(weights.diagnostics(), Path(args.out).with_suffix(".json"))
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    kernel = _kernel(args)
    train = Dataset.from_csv(args.train)
    test = _read_test(args.test).without_labels()
    plan = SplitPlan(train.n_rows, args.rho, reuse_full=not args.split)
    report = estimate_all(train, test, plan, _kmm_config(args, kernel), _fitter(args, kernel))
    _write_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_erm(args: argparse.Namespace) -> int:
    kernel = _kernel(args)
    train = Dataset.from_csv(args.train)
    test_full = _read_test(args.test)
    test = test_full.without_labels()
    plan = SplitPlan(train.n_rows, args.rho, reuse_full=not args.split)
    problem = ErmProblem(kernel, LossType(args.loss), args.lam, ErmMode(args.mode))

    weights = None
    if problem.mode != ErmMode.UNWEIGHTED_NR:
        kmm_part = train.subset(plan.kmm_indices).without_labels()
        weights = kmm_weights(kmm_part, test, _kmm_config(args, kernel))
    g_hat = _fitter(args, kernel).fit(train.subset(plan.nr_indices), test.n_rows)
    fit = fit_erm(problem, train, test, plan, weights, g_hat)

    values = {"problem": problem.to_dict(), "fit": fit.to_dict()}
    if test_full.has_labels and problem.loss == LossType.LOGISTIC:
        values["test_error"] = misclassification_rate(fit, test_full)
    _write_json(values, args.out)

    if args.predict:
        frame = pd.DataFrame({"prediction": predict_erm(fit, test)})
        if problem.loss == LossType.LOGISTIC:
            frame["probability"] = predict_proba_erm(fit, test)
            frame["label"] = classify_erm(fit, test).astype(np.int64)
        frame.to_csv(args.predict, index=False, encoding="utf-8")
        logger.info("Wrote %d predictions to %s", len(frame), args.predict)
    return EXIT_OK


def cmd_datagen(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shift = not args.no_shift
    truth = {"kind": args.kind, "seed": args.seed}
    if args.kind == "toy":
        train, test, test_labels = gen_toy1d(args.n_tr, args.n_te, args.seed, shift=shift)
        pd.DataFrame({"y": test_labels}).to_csv(out_dir / "test_labels.csv", index=False, encoding="utf-8")
    elif args.kind == "table1":
        problem = Gaussian10dProblem(shift=shift)
        train, test = problem.sample(args.n_tr, args.n_te, args.seed)
        truth["problem"] = problem.to_dict()
    else:
        problem = KernelSectionProblem()
        train, test = problem.sample(args.n_tr, args.n_te, args.seed)
        truth["nu"] = problem.nu()
        truth["problem"] = problem.to_dict()
    train.to_csv(out_dir / "train.csv")
    test.to_csv(out_dir / "test.csv")
    _write_json(truth, out_dir / "truth.json")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    config = load_config(args.kind, args.config, args.seed)
    if args.jobs is not None:
        config = config.with_jobs(args.jobs)
    report = run_experiment(config)
    report.write_json(args.out)
    if args.csv:
        report.write_csv(args.csv)
    failed = [name for name, passed in report.checks.items() if not passed]
    if failed:
        logger.warning("Failed checks: %s", ", ".join(failed))
        if args.check:
            return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {
    "weights": cmd_weights,
    "estimate": cmd_estimate,
    "erm": cmd_erm,
    "datagen": cmd_datagen,
    "experiment": cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except PACKAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
