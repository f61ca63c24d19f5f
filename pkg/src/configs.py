from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from .constants import (
    EXPERIMENT_DEFAULTS,
    GAUSSIAN10D_DEFAULTS,
    KMM_DEFAULTS,
    QP_DEFAULTS,
    ERM_DEFAULTS,
    RATE_PROBLEM_DEFAULTS,
    RATE_SIZES,
    TABLE1_REFERENCE,
    TABLE1_SIGMA,
    TOY_DEFAULTS,
    UCI_DEFAULTS,
    UCI_LAMBDA,
    UCI_SIGMA,
    UCI_TRAIN_FRACTIONS,
    ErmMode,
    GammaRule,
    GHatKind,
    LossType,
    ScenarioKind,
)
from .datagen import DatagenError, ExperimentScenario
from .kernels import KernelError, KernelSpec
from .kmm import KmmConfig, KmmError
from .ridge import GammaSchedule, GHatFitter, RidgeError

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(self.message)


@dataclass(frozen=True)
class KmmSettings:
    B: float = KMM_DEFAULTS["B"]
    epsilon: Optional[float] = None
    include_band: bool = KMM_DEFAULTS["include_band"]
    tol: float = QP_DEFAULTS["tol"]
    max_iter: int = QP_DEFAULTS["max_iter"]
    require_convergence: bool = False

    def build(self, kernel: KernelSpec) -> KmmConfig:
        return KmmConfig(
            kernel=kernel,
            B=self.B,
            epsilon=self.epsilon,
            include_band=self.include_band,
            tol=self.tol,
            max_iter=self.max_iter,
            require_convergence=self.require_convergence,
        )


@dataclass(frozen=True)
class GHatSettings:
    kind: str = GHatKind.KERNEL_RIDGE.value
    gamma_rule: str = GammaRule.INVERSE_NTR.value
    theta: float = 1.0
    gamma_value: Optional[float] = None
    lasso_lambda: float = 0.1

    def build(self, kernel: KernelSpec, lasso_lambda: Optional[float] = None) -> GHatFitter:
        if GHatKind(self.kind) == GHatKind.LASSO_LINEAR:
            return GHatFitter.lasso(self.lasso_lambda if lasso_lambda is None else lasso_lambda)
        schedule = GammaSchedule(GammaRule(self.gamma_rule), self.theta, self.gamma_value)
        return GHatFitter.kernel_ridge(kernel, schedule)


@dataclass(frozen=True)
class ErmSettings:
    lam: float = UCI_LAMBDA
    losses: Tuple[str, ...] = (LossType.SQUARED.value, LossType.LOGISTIC.value)
    modes: Tuple[str, ...] = (
        ErmMode.UNWEIGHTED_NR.value,
        ErmMode.KMM_WEIGHTED.value,
        ErmMode.ROBUST.value,
    )
    tol: float = ERM_DEFAULTS["logistic_tol"]
    max_iter: int = ERM_DEFAULTS["logistic_max_iter"]


@dataclass(frozen=True)
class SplitSettings:
    rho: Optional[float] = None
    reuse_full: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    kind: ScenarioKind
    scenario: ExperimentScenario
    replications: int
    base_seed: int
    kernel: KernelSpec
    kmm_kernel: Optional[KernelSpec] = None
    kmm: KmmSettings = KmmSettings()
    ghat: GHatSettings = GHatSettings()
    erm: ErmSettings = ErmSettings()
    split: SplitSettings = SplitSettings()
    lasso_lambdas: Tuple[float, ...] = ()
    oracle_samples: int = GAUSSIAN10D_DEFAULTS["oracle_samples"]
    oracle_seed: int = GAUSSIAN10D_DEFAULTS["oracle_seed"]
    bootstrap: int = 0
    n_jobs: int = 1

    def __post_init__(self) -> None:
        func_name = "ExperimentConfig"
        if int(self.replications) < 1:
            raise ConfigError(f"{func_name}: replications must be >= 1, got {self.replications}")
        if isinstance(self.base_seed, bool) or not isinstance(self.base_seed, int) or self.base_seed < 0:
            raise ConfigError(f"{func_name}: base_seed must be an explicit non-negative integer")
        if self.n_jobs == 0:
            raise ConfigError(f"{func_name}: n_jobs must be nonzero")

    @property
    def weight_kernel(self) -> KernelSpec:
        return self.kmm_kernel or self.kernel

    def kmm_config(self) -> KmmConfig:
        return self.kmm.build(self.weight_kernel)

    def ghat_fitter(self, lasso_lambda: Optional[float] = None) -> GHatFitter:
        return self.ghat.build(self.kernel, lasso_lambda)

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, base_seed=int(seed))

    def with_jobs(self, n_jobs: int) -> ExperimentConfig:
        return replace(self, n_jobs=int(n_jobs))

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "scenario": self.scenario.to_dict(),
            "replications": self.replications,
            "base_seed": self.base_seed,
            "kernel": self.kernel.to_dict(),
            "kmm_kernel": None if self.kmm_kernel is None else self.kmm_kernel.to_dict(),
            "kmm": _plain(self.kmm),
            "ghat": _plain(self.ghat),
            "erm": _plain(self.erm),
            "split": _plain(self.split),
            "lasso_lambdas": list(self.lasso_lambdas),
            "oracle_samples": self.oracle_samples,
            "oracle_seed": self.oracle_seed,
            "bootstrap": self.bootstrap,
            "n_jobs": self.n_jobs,
        }


def _plain(settings) -> Dict[str, object]:
    return {
        key: list(value) if isinstance(value, tuple) else value
        for key, value in settings.__dict__.items()
    }


def _scenario_defaults(kind: ScenarioKind) -> Dict[str, object]:
    scenario = ExperimentScenario(kind).to_dict()
    if kind == ScenarioKind.TOY1D:
        n = EXPERIMENT_DEFAULTS["toy"]
        scenario.update(sizes=[[n["n_tr"], n["n_te"]]], noise_sd=TOY_DEFAULTS["noise_sd"])
        scenario["extra"] = {"share_covariates": False}
    elif kind == ScenarioKind.GAUSSIAN10D:
        scenario.update(
            sizes=[[n_tr, n_te] for n_tr, n_te in dict.fromkeys(key[1:] for key in TABLE1_REFERENCE)],
            noise_sd=GAUSSIAN10D_DEFAULTS["noise_sd"],
        )
        scenario["extra"] = {
            "mean_scale": GAUSSIAN10D_DEFAULTS["mean_scale"],
            "a_scale": GAUSSIAN10D_DEFAULTS["a_scale"],
            "dim": GAUSSIAN10D_DEFAULTS["dim"],
        }
    elif kind == ScenarioKind.UCI_BIAS:
        scenario.update(
            sigma1=UCI_DEFAULTS["sigma1"],
            train_fractions=list(UCI_TRAIN_FRACTIONS),
            layout=UCI_DEFAULTS["layout"],
        )
    else:
        scenario.update(sizes=[[n, n] for n in RATE_SIZES], noise_sd=RATE_PROBLEM_DEFAULTS["noise_sd"])
        scenario["extra"] = {
            "center": RATE_PROBLEM_DEFAULTS["center"],
            "bandwidth": RATE_PROBLEM_DEFAULTS["bandwidth"],
        }
    return scenario


def default_config_dict(kind: Union[ScenarioKind, str]) -> Dict[str, object]:
    """
    Full default configuration of one experiment kind as plain JSON values.
    """
    kind = ScenarioKind(kind) if isinstance(kind, str) else kind
    defaults = EXPERIMENT_DEFAULTS[kind.value]
    values: Dict[str, object] = {
        "kind": kind.value,
        "scenario": _scenario_defaults(kind),
        "replications": defaults["replications"],
        "base_seed": defaults["base_seed"],
        "kernel": None,
        "kmm_kernel": None,
        "kmm": _plain(KmmSettings()),
        "ghat": _plain(GHatSettings()),
        "erm": _plain(ErmSettings()),
        "split": _plain(SplitSettings()),
        "lasso_lambdas": [],
        "oracle_samples": GAUSSIAN10D_DEFAULTS["oracle_samples"],
        "oracle_seed": GAUSSIAN10D_DEFAULTS["oracle_seed"],
        "bootstrap": defaults.get("bootstrap", 0),
        "n_jobs": 1,
    }
    if kind == ScenarioKind.TOY1D:
        values["kernel"] = KernelSpec.polynomial(3, 1.0).to_dict()
        values["kmm_kernel"] = KernelSpec.gaussian(1.0).to_dict()
    elif kind == ScenarioKind.GAUSSIAN10D:
        values["kernel"] = KernelSpec.gaussian(TABLE1_SIGMA).to_dict()
        values["ghat"]["kind"] = GHatKind.LASSO_LINEAR.value
        values["lasso_lambdas"] = sorted({key[0] for key in TABLE1_REFERENCE})
    elif kind == ScenarioKind.UCI_BIAS:
        values["kernel"] = KernelSpec.gaussian(UCI_SIGMA).to_dict()
    else:
        values["kernel"] = KernelSpec.gaussian(RATE_PROBLEM_DEFAULTS["bandwidth"]).to_dict()
    return values


def merge_config(defaults: Dict[str, object], overrides: Dict[str, object], path: str = "") -> Dict[str, object]:
    """
    Recursively overlays overrides on defaults.

    Raises:
        ConfigError: For keys that do not exist in defaults (free-form
            'extra' sections excepted).
    """
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        location = f"{path}.{key}" if path else key
        if key not in merged:
            if path.endswith("extra"):
                merged[key] = value
                continue
            raise ConfigError(f"merge_config: unknown configuration key '{location}'")
        if isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = merge_config(merged[key], value, location)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _dataclass_from(cls, values: Dict[str, object], section: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"config_from_dict: unknown keys in '{section}': {sorted(unknown)}")
    converted = {key: tuple(value) if isinstance(value, list) else value for key, value in values.items()}
    return cls(**converted)


def config_from_dict(values: Dict[str, object]) -> ExperimentConfig:
    """
    Builds a typed configuration from a complete (merged) dictionary.

    Raises:
        ConfigError: If a value is missing or invalid.
    """
    func_name = config_from_dict.__name__
    try:
        kind = ScenarioKind(values["kind"])
        scenario_values = dict(values["scenario"])
        scenario_values["kind"] = kind
        scenario_values["sizes"] = tuple(tuple(pair) for pair in scenario_values.get("sizes", ()))
        scenario = _dataclass_from(ExperimentScenario, scenario_values, "scenario")
        kmm_kernel = values.get("kmm_kernel")
        ghat = _dataclass_from(GHatSettings, values["ghat"], "ghat")
        GHatKind(ghat.kind)
        GammaRule(ghat.gamma_rule)
        erm = _dataclass_from(ErmSettings, values["erm"], "erm")
        for loss in erm.losses:
            LossType(loss)
        for mode in erm.modes:
            ErmMode(mode)
        config = ExperimentConfig(
            kind=kind,
            scenario=scenario,
            replications=int(values["replications"]),
            base_seed=values["base_seed"],
            kernel=KernelSpec.from_dict(values["kernel"]),
            kmm_kernel=None if kmm_kernel is None else KernelSpec.from_dict(kmm_kernel),
            kmm=_dataclass_from(KmmSettings, values["kmm"], "kmm"),
            ghat=ghat,
            erm=erm,
            split=_dataclass_from(SplitSettings, values["split"], "split"),
            lasso_lambdas=tuple(float(v) for v in values.get("lasso_lambdas", ())),
            oracle_samples=int(values["oracle_samples"]),
            oracle_seed=int(values["oracle_seed"]),
            bootstrap=int(values.get("bootstrap", 0)),
            n_jobs=int(values.get("n_jobs", 1)),
        )
        # validate the derived objects early
        config.kmm_config()
        if GHatKind(ghat.kind) == GHatKind.KERNEL_RIDGE:
            config.ghat_fitter()
    except ConfigError:
        raise
    except KeyError as e:
        raise ConfigError(f"{func_name}: missing configuration key {e}") from e
    except (ValueError, TypeError, KernelError, KmmError, RidgeError, DatagenError) as e:
        raise ConfigError(f"{func_name}: {e}") from e
    if kind == ScenarioKind.GAUSSIAN10D and not config.lasso_lambdas and ghat.kind == GHatKind.LASSO_LINEAR.value:
        raise ConfigError(f"{func_name}: lasso g_hat needs at least one lasso lambda")
    if kind == ScenarioKind.UCI_BIAS and not config.scenario.data_path:
        logger.debug("%s: UCI config without data_path; it must be supplied before running", func_name)
    return config


def default_config(kind: Union[ScenarioKind, str]) -> ExperimentConfig:
    return config_from_dict(default_config_dict(kind))


def load_config(
    kind: Union[ScenarioKind, str],
    path: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
) -> ExperimentConfig:
    """
    Loads a JSON configuration over the defaults of kind.

    Args:
        kind: Experiment kind.
        path (optional): JSON file with overrides.
        seed (int, optional): Overrides base_seed.

    Raises:
        ConfigError: If the file cannot be read, contains unknown keys or
            names a different kind.
    """
    func_name = load_config.__name__
    kind = ScenarioKind(kind) if isinstance(kind, str) else kind
    values = default_config_dict(kind)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                overrides = json.load(handle)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{func_name}: cannot read {path}: {e}") from e
        if not isinstance(overrides, dict):
            raise ConfigError(f"{func_name}: {path} must contain a JSON object")
        if overrides.get("kind", kind.value) != kind.value:
            raise ConfigError(f"{func_name}: {path} is a '{overrides['kind']}' config, expected '{kind.value}'")
        values = merge_config(values, overrides)
    if seed is not None:
        values["base_seed"] = int(seed)
    config = config_from_dict(values)
    logger.debug("%s: %s", func_name, json.dumps(config.to_dict(), sort_keys=True))
    return config


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(config.to_dict(), handle, indent=2, sort_keys=True)


def json_ready(value):
    """
    Converts NaN / inf to None and tuples to lists for strict JSON output.
    """
    if isinstance(value, dict):
        return {str(key): json_ready(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(item) for item in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value
