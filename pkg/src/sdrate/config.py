"""Pipeline configuration.

A :class:`PipelineConfig` groups every tuning knob of the estimation
pipeline.  It is read from and written to YAML; unknown keys are rejected so
a typo can never silently fall back to a default.

Example file::

    smoother:
      kernel: EPAN
      bandwidth_exponent: -0.2
    imp:
      bwc_impute1: 1.25
    initial:
      beta_guess1: [1, -1, 1, -2, -1.5, 0.5]
      beta_guess0: [1, 1, 0, 0, 0, 0]
      alpha_initial: [-0.27, 0.2, -0.15, 0.05, 0.15, -0.1]
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

import numpy as np
import yaml

from .exceptions import ConfigurationError
from .kernels import DEFAULT_EXPONENT, KernelFamily

PAPER_BETA1 = [1.0, -1.0, 1.0, -2.0, -1.5, 0.5]
PAPER_BETA0 = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
PAPER_ALPHA = [-0.27, 0.2, -0.15, 0.05, 0.15, -0.1]


@dataclass
class SmootherConfig:
    kernel: str = "EPAN"
    gauss_cutoff: float = 1e-3
    explicit_bandwidth: bool = False
    bandwidth_exponent: float = DEFAULT_EXPONENT
    to_extrapolate: bool = True
    extrapolation_basis: int = 5
    to_truncate: bool = True
    n_threads: int = 1

    def __post_init__(self):
        self.family  # validates the kernel name
        if self.extrapolation_basis < 2:
            raise ConfigurationError("extrapolation_basis must be >= 2")
        if self.n_threads < 1:
            raise ConfigurationError("n_threads must be >= 1")

    @property
    def family(self) -> KernelFamily:
        return KernelFamily(self.kernel, self.gauss_cutoff)

    @property
    def mode(self) -> str:
        return "explicit" if self.explicit_bandwidth else "scaled"


@dataclass
class OptimizerConfig:
    solver: str = "optim"
    method: str = "Nelder-Mead"
    max_iter: int = 500
    reltol: float = 1e-8
    sann_temp: float = 10.0
    sann_cooling: float = 0.95
    sann_tmax: int = 10
    seed: int = 0

    def __post_init__(self):
        self.algorithm  # validates solver/method

    @property
    def algorithm(self) -> str:
        solver = self.solver.lower()
        if solver == "cobyla":
            return "cobyla"
        if solver != "optim":
            raise ConfigurationError(f"solver must be 'optim' or 'cobyla', got {self.solver!r}")
        method = self.method.upper().replace("_", "-")
        if method == "NELDER-MEAD":
            return "nelder-mead"
        if method == "SANN":
            return "sann"
        raise ConfigurationError(f"unsupported optim method {self.method!r}; use Nelder-Mead or SANN")

    def options(self) -> dict:
        algo = self.algorithm
        if algo == "nelder-mead":
            return {"max_iter": self.max_iter, "reltol": self.reltol}
        if algo == "sann":
            return {"max_iter": self.max_iter, "temp": self.sann_temp,
                    "cooling": self.sann_cooling, "tmax": self.sann_tmax, "seed": self.seed}
        return {"max_iter": self.max_iter, "tol": self.reltol}


@dataclass
class ImpConfig:
    bwc_dim_red1: float = 1.0
    bwc_impute1: float = 1.25
    bwc_dim_red0: float = 1.0
    bwc_impute0: float = 1.25
    recalc_bandwidth: bool = False
    penalty: float = 10.0
    n_before_pen: int = 5


@dataclass
class IpwConfig:
    bwc_dim_red: float = 1.0
    bwc_prop_score: float = 10.0
    recalc_bandwidth: bool = True
    penalty: float = 10.0
    n_before_pen: int = 1


@dataclass
class VarianceConfig:
    imp_num_deriv_h: float = 1e-6
    ipw_num_deriv_h: float = 1e-8
    aipw_num_deriv_h: float = 1e-6
    # reading of the (1 - p) / p weights in the IMP correction terms:
    # true -> inside the expectation, false -> per-observation factor
    imp_weight_inside: bool = True


@dataclass
class Study1Config:
    n: int = 1000
    seed: int = 48371
    true_beta1: list = field(default_factory=lambda: list(PAPER_BETA1))
    true_beta0: list = field(default_factory=lambda: list(PAPER_BETA0))
    true_alpha: list = field(default_factory=lambda: list(PAPER_ALPHA))

    def __post_init__(self):
        for name in ("true_beta1", "true_beta0", "true_alpha"):
            v = [float(x) for x in getattr(self, name)]
            if len(v) != 6:
                raise ConfigurationError(f"{name} must have 6 entries")
            setattr(self, name, v)
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")


@dataclass
class InitialGuesses:
    beta_guess1: list | None = None
    beta_guess0: list | None = None
    alpha_initial: list | None = None

    def __post_init__(self):
        for name in ("beta_guess1", "beta_guess0", "alpha_initial"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, _as_nested(v, name))


def _as_nested(v, name):
    a = np.asarray(v, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[1] not in (1, 2) or a.shape[0] <= a.shape[1]:
        raise ConfigurationError(f"{name} must be a p x d matrix with d in (1, 2) and p > d")
    return a.tolist()


@dataclass
class PipelineConfig:
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    imp: ImpConfig = field(default_factory=ImpConfig)
    ipw: IpwConfig = field(default_factory=IpwConfig)
    variance: VarianceConfig = field(default_factory=VarianceConfig)
    initial: InitialGuesses = field(default_factory=InitialGuesses)
    study1: Study1Config = field(default_factory=Study1Config)
    verbose: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data) -> "PipelineConfig":
        return _build(cls, data or {}, "")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text) -> "PipelineConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigurationError("config root must be a mapping")
        return cls.from_dict(data)


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string, got {value!r}")
        return value
    if origin in (typing.Union, types.UnionType) or tp is list or origin is list:
        if value is None:
            return None
        if not isinstance(value, list):
            raise ConfigurationError(f"{path}: expected a list, got {value!r}")
        return value
    return value


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{prefix or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f" in section {prefix!r}" if prefix else ""
        raise ConfigurationError(f"unknown config key(s){where}: {', '.join(map(str, unknown))}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        path = f"{prefix}.{name}" if prefix else name
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value or {}, path)
        else:
            kwargs[name] = _coerce(tp, value, path)
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{prefix or 'config'}: {exc}") from None


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return PipelineConfig.from_yaml(fh.read())


def dump_config(config: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config.to_yaml())
