"""Run configuration: an INI-style ``key = value`` file with sections.

Recognised sections and keys (all optional)::

    [run]      seed, sigma, trials, integrand
    [inputs]   cloud1, cloud2, manifest
    [extract]  manufacturer, threshold, eps, min_points, radius, max_rms
    [solver]   loss, huber_delta
    [icp]      max_iterations, convergence_eps, max_correspondence_distance,
               subsample_size, kappa
    [metrics]  kernel_sigma, rqe_subsample, e_rt_min, e_rt_max

Unknown sections or keys are rejected so that typos do not silently fall
back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .disambiguate import IcpParams
from .errors import ConfigError
from .extract import threshold_for
from .metrics import RqeConfig

CONFIG_ENV = "POLECALIB_CONFIG"


@dataclass(frozen=True)
class ExtractParams:
    manufacturer: str = ""
    threshold: Optional[float] = None
    eps: float = 0.3
    min_points: int = 5
    radius: float = 0.02
    max_rms: float = 0.06

    def effective_threshold(self) -> float:
        if self.threshold is not None:
            return self.threshold
        return threshold_for(self.manufacturer or None)


@dataclass(frozen=True)
class SolverParams:
    loss: str = "squared"
    huber_delta: float = 0.018


@dataclass(frozen=True)
class MetricParams:
    kernel_sigma: float = 0.05
    rqe_subsample: int = 4000
    e_rt_min: float = 1.0
    e_rt_max: float = 60.0

    def rqe(self) -> RqeConfig:
        return RqeConfig(kernel_sigma=self.kernel_sigma, subsample_size=self.rqe_subsample)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    sigma: float = 0.006
    trials: int = 1
    integrand: str = "sum"
    cloud1: str = ""
    cloud2: str = ""
    manifest: str = ""
    extract: ExtractParams = field(default_factory=ExtractParams)
    solver: SolverParams = field(default_factory=SolverParams)
    icp: IcpParams = field(default_factory=IcpParams)
    kappa: float = 1.0
    metrics: MetricParams = field(default_factory=MetricParams)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def canonical_text(self) -> str:
        """Parameters that influence results, one ``section.key = value`` per line.

        Input paths are left out: they locate data, they do not change how it
        is processed.
        """
        lines = []
        for section, values in self._sections():
            for k, v in values.items():
                lines.append(f"{section}.{k} = {_text(v)}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("ascii")).hexdigest()[:16]

    def _sections(self):
        return [
            ("run", {"seed": self.seed, "sigma": self.sigma, "trials": self.trials, "integrand": self.integrand}),
            ("extract", dataclasses.asdict(self.extract)),
            ("solver", dataclasses.asdict(self.solver)),
            ("icp", {**dataclasses.asdict(self.icp), "kappa": self.kappa}),
            ("metrics", dataclasses.asdict(self.metrics)),
        ]

    def validate(self, need_inputs: bool = False) -> None:
        if self.sigma < 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if self.integrand not in ("sum", "product"):
            raise ConfigError(f"integrand must be sum or product, got {self.integrand!r}")
        if self.solver.loss not in ("squared", "huber"):
            raise ConfigError(f"solver loss must be squared or huber, got {self.solver.loss!r}")
        if self.extract.radius < 0 or self.extract.eps <= 0 or self.extract.min_points < 2:
            raise ConfigError("extract needs radius >= 0, eps > 0 and min_points >= 2")
        th = self.extract.effective_threshold()
        if not 0.0 <= th <= 255.0:
            raise ConfigError(f"threshold {th} outside [0, 255]")
        if self.kappa < 0:
            raise ConfigError("kappa must be non-negative")
        if not 0 <= self.metrics.e_rt_min < self.metrics.e_rt_max:
            raise ConfigError("need 0 <= e_rt_min < e_rt_max")
        if need_inputs:
            for name in ("cloud1", "cloud2"):
                path = getattr(self, name)
                if not path:
                    raise ConfigError(f"no {name} given", hint="set [inputs] in the config or run simulate first")
                if not Path(path).is_file():
                    raise ConfigError(f"{name} file {path} does not exist")


def _text(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


_SCHEMA = {
    "run": {"seed": int, "sigma": float, "trials": int, "integrand": str},
    "inputs": {"cloud1": str, "cloud2": str, "manifest": str},
    "extract": {
        "manufacturer": str, "threshold": float, "eps": float,
        "min_points": int, "radius": float, "max_rms": float,
    },
    "solver": {"loss": str, "huber_delta": float},
    "icp": {
        "max_iterations": int, "convergence_eps": float, "max_correspondence_distance": float,
        "subsample_size": int, "kappa": float,
    },
    "metrics": {"kernel_sigma": float, "rqe_subsample": int, "e_rt_min": float, "e_rt_max": float},
}


def _convert(section: str, key: str, raw: str, source: str):
    kind = _SCHEMA[section][key]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{source}: [{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def parse_config(text: str, source: str = "<string>", base: Optional[Path] = None) -> RunConfig:
    cp = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#", ";")
    )
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc.message}", hint="use 'key = value' lines under [section] headers") from None
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]", hint=f"known: {', '.join(_SCHEMA)}")
        for key, raw in cp[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            values.setdefault(section, {})[key] = _convert(section, key, raw.strip(), source)
    run = values.get("run", {})
    inputs = values.get("inputs", {})
    if base is not None:
        # relative input paths are relative to the config file
        inputs = {k: str(base / v) if v and not Path(v).is_absolute() else v for k, v in inputs.items()}
    icp = dict(values.get("icp", {}))
    kappa = icp.pop("kappa", 1.0)
    try:
        return RunConfig(
            **run,
            **inputs,
            extract=ExtractParams(**values.get("extract", {})),
            solver=SolverParams(**values.get("solver", {})),
            icp=IcpParams(**icp),
            kappa=kappa,
            metrics=MetricParams(**values.get("metrics", {})),
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: Optional[str] = None) -> RunConfig:
    """Load the run configuration.

    The path comes from ``path`` (the ``--config`` flag) if given, else from
    the ``POLECALIB_CONFIG`` environment variable; with neither, defaults apply.
    """
    path = path or os.environ.get(CONFIG_ENV) or None
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist", hint=f"check --config or ${CONFIG_ENV}")
    return parse_config(p.read_text(encoding="utf-8"), str(p), p.parent)
