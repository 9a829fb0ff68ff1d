"""Run configuration: YAML files flattened to dotted keys, validated once.

Both nested sections and flat dotted keys are accepted::

    network:
      d_net: 20
    radio.gamma_db: 10

dB values for Gamma and beta are converted to linear here and nowhere else;
sigma_s stays in dB.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULTS: dict[str, Any] = {
    "network.d_net": 20.0,
    "network.r_bs": 0.5,
    "network.d_sfn": 6.0,
    "network.d_max_km": 5.0,
    "network.km_per_unit": 1.0,
    "network.max_attempts": 10_000,
    "channel.alpha": 3.5,
    "channel.d0": 0.01,
    "channel.r_f": 0.5,
    "channel.sigma_s_db": 0.0,
    "channel.d_corr": 0.02,
    "radio.gamma_db": 10.0,
    "grid.spacing": 0.1,
    "grid.eval_side": 10.0,
    "experiment.realizations": 50,
    "experiment.seed": 0,
    "experiment.eps_hat": 0.1,
    "experiment.target_abot": 0.9,
    "experiment.axis": None,
    "experiment.values": [],
    "experiment.series": {},
    "experiment.instances": 50,
    "experiment.trials": 100_000,
    "output.directory": "out",
    "output.formats": ["csv"],
    "output.audit_dir": ".audit",
}

# Pairs of which exactly one must be set; the first entry's default applies when neither is.
EXCLUSIVE: tuple[tuple[str, str, Any], ...] = (
    ("network.stations", "network.density", 400),
    ("radio.rate", "radio.beta_db", 1.0),
)

KNOWN_KEYS = frozenset(DEFAULTS) | {key for pair in EXCLUSIVE for key in pair[:2]}

AXES: dict[str, str] = {
    "rate": "radio.rate",
    "eps_hat": "experiment.eps_hat",
    "r_bs": "network.r_bs",
    "d_sfn": "network.d_sfn",
    "lambda": "network.density",
}

FORMATS = frozenset({"csv", "shadowing"})


def db_to_linear(value_db: float) -> float:
    return float(10.0 ** (value_db / 10.0))


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# SECTIONS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


@dataclass(frozen=True)
class NetworkConfig:
    stations: int | None
    density: float | None
    d_net: float
    r_bs: float
    d_sfn: float
    d_max_km: float
    km_per_unit: float
    max_attempts: int

    @property
    def station_count(self) -> int:
        """M, or round(lambda * d_net^2) when a density is configured."""
        if self.stations is not None:
            return self.stations
        assert self.density is not None  # nosec: B101
        return round(self.density * self.d_net**2)

    @property
    def d_max(self) -> float:
        """Extended cyclic prefix reach in arena units."""
        return self.d_max_km / self.km_per_unit


@dataclass(frozen=True)
class ChannelConfig:
    alpha: float
    d0: float
    r_f: float | str
    sigma_s_db: float
    d_corr: float

    def fading_radius(self, r_bs: float) -> float:
        return r_bs if self.r_f == "r_bs" else float(self.r_f)


@dataclass(frozen=True)
class RadioConfig:
    gamma_db: float
    gamma: float
    beta: float
    rate: float | None


@dataclass(frozen=True)
class GridConfig:
    spacing: float
    eval_side: float


@dataclass(frozen=True)
class ExperimentConfig:
    realizations: int
    seed: int
    eps_hat: float
    target_abot: float
    axis: str | None
    values: tuple[float, ...]
    series: tuple[tuple[str, tuple[Any, ...]], ...]
    instances: int
    trials: int


@dataclass(frozen=True)
class OutputConfig:
    directory: Path
    formats: tuple[str, ...]
    audit_dir: Path


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig
    channel: ChannelConfig
    radio: RadioConfig
    grid: GridConfig
    experiment: ExperimentConfig
    output: OutputConfig
    values: dict[str, Any] = field(repr=False, compare=False)

    def with_values(self, updates: Mapping[str, Any]) -> RunConfig:
        """A new config with some dotted keys replaced (setting one of an exclusive pair clears the other)."""
        flat = dict(self.values)
        for key, value in updates.items():
            for first, second, _ in EXCLUSIVE:
                if key == first:
                    flat.pop(second, None)
                elif key == second:
                    flat.pop(first, None)
            flat[key] = value
        return parse_config(flat)

    def series_configs(self) -> list[tuple[str, RunConfig]]:
        """One (label, config) per combination of `experiment.series` values; [("", self)] when unset."""
        if not self.experiment.series:
            return [("", self)]
        keys = [key for key, _ in self.experiment.series]
        out = []
        for combo in itertools.product(*(choices for _, choices in self.experiment.series)):
            label = ",".join(f"{key}={value}" for key, value in zip(keys, combo, strict=True))
            out.append((label, self.with_values(dict(zip(keys, combo, strict=True)))))
        return out

    def audit_view(self) -> dict[str, Any]:
        """JSON-safe copy of the flat values."""
        return {key: (str(value) if isinstance(value, Path) else value) for key, value in sorted(self.values.items())}


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# LOADING
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


def flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Nested sections to dotted keys. Values of known keys are kept whole."""
    flat: dict[str, Any] = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping) and dotted not in KNOWN_KEYS:
            flat.update(flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def load_config(path: Path | None = None) -> RunConfig:
    """Defaults overlaid with the YAML file at `path`."""
    if path is None:
        return parse_config({})
    try:
        with path.open(encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: top level must be a mapping, got {type(document).__name__}")
    logger.debug("loaded config %s", path)
    return parse_config(flatten(document))


def parse_config(user: Mapping[str, Any]) -> RunConfig:
    unknown = sorted(set(user) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    flat = {**DEFAULTS, **user}
    for first, second, default in EXCLUSIVE:
        given = [key for key in (first, second) if flat.get(key) is not None]
        if len(given) == 2:
            raise ConfigError(f"set only one of {first} and {second}")
        if not given:
            flat[first] = default
        flat.setdefault(second, None)
        flat.setdefault(first, None)

    network = NetworkConfig(
        stations=_optional(flat, "network.stations", int),
        density=_optional(flat, "network.density", float),
        d_net=_number(flat, "network.d_net", positive=True),
        r_bs=_number(flat, "network.r_bs", minimum=0.0),
        d_sfn=_number(flat, "network.d_sfn", positive=True),
        d_max_km=_number(flat, "network.d_max_km", positive=True),
        km_per_unit=_number(flat, "network.km_per_unit", positive=True),
        max_attempts=_integer(flat, "network.max_attempts", minimum=1),
    )
    if network.stations is not None and network.stations < 1:
        raise ConfigError("network.stations must be >= 1")
    if network.density is not None and network.station_count < 1:
        raise ConfigError(f"network.density {network.density} gives no stations on d_net={network.d_net}")

    r_f = flat["channel.r_f"]
    if r_f != "r_bs":
        r_f = _number(flat, "channel.r_f", minimum=0.0)
    channel = ChannelConfig(
        alpha=_number(flat, "channel.alpha", minimum=2.0),
        d0=_number(flat, "channel.d0", positive=True),
        r_f=r_f,
        sigma_s_db=_number(flat, "channel.sigma_s_db", minimum=0.0),
        d_corr=_number(flat, "channel.d_corr", positive=True),
    )

    gamma_db = _number(flat, "radio.gamma_db")
    rate = _optional(flat, "radio.rate", float)
    if rate is not None:
        if rate <= 0:
            raise ConfigError(f"radio.rate must be > 0, got {rate}")
        beta = 2.0**rate - 1.0
    else:
        beta = db_to_linear(_number(flat, "radio.beta_db"))
    radio = RadioConfig(gamma_db=gamma_db, gamma=db_to_linear(gamma_db), beta=beta, rate=rate)

    grid = GridConfig(
        spacing=_number(flat, "grid.spacing", positive=True),
        eval_side=_number(flat, "grid.eval_side", positive=True),
    )
    if grid.eval_side > network.d_net or grid.spacing > network.d_net:
        raise ConfigError("grid.spacing and grid.eval_side must not exceed network.d_net")

    experiment = _experiment(flat)
    output = _output(flat)
    return RunConfig(network, channel, radio, grid, experiment, output, values=flat)


def _experiment(flat: dict[str, Any]) -> ExperimentConfig:
    eps_hat = _number(flat, "experiment.eps_hat")
    if not 0 < eps_hat < 1:
        raise ConfigError(f"experiment.eps_hat must lie in (0, 1), got {eps_hat}")
    target_abot = _number(flat, "experiment.target_abot")
    if not 0 < target_abot <= 1:
        raise ConfigError(f"experiment.target_abot must lie in (0, 1], got {target_abot}")
    axis = flat["experiment.axis"]
    if axis is not None and axis not in AXES:
        raise ConfigError(f"experiment.axis must be one of {sorted(AXES)}, got {axis!r}")
    raw_values = flat["experiment.values"]
    if not isinstance(raw_values, list | tuple):
        raise ConfigError("experiment.values must be a list")
    try:
        values = tuple(float(v) for v in raw_values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"experiment.values: {e}") from e

    raw_series = flat["experiment.series"] or {}
    if not isinstance(raw_series, Mapping):
        raise ConfigError("experiment.series must map dotted keys to lists")
    series = []
    for key, choices in raw_series.items():
        if key not in KNOWN_KEYS or key.startswith(("experiment.", "output.")):
            raise ConfigError(f"experiment.series: {key!r} is not a sweepable key")
        if not isinstance(choices, list) or not choices:
            raise ConfigError(f"experiment.series.{key} must be a nonempty list")
        series.append((str(key), tuple(choices)))

    return ExperimentConfig(
        realizations=_integer(flat, "experiment.realizations", minimum=1),
        seed=_integer(flat, "experiment.seed", minimum=0),
        eps_hat=eps_hat,
        target_abot=target_abot,
        axis=axis,
        values=values,
        series=tuple(series),
        instances=_integer(flat, "experiment.instances", minimum=1),
        trials=_integer(flat, "experiment.trials", minimum=1),
    )


def _output(flat: dict[str, Any]) -> OutputConfig:
    formats = flat["output.formats"]
    if isinstance(formats, str):
        formats = [formats]
    bad = sorted(set(formats) - FORMATS)
    if bad:
        raise ConfigError(f"output.formats: unsupported {', '.join(bad)}")
    return OutputConfig(
        directory=Path(flat["output.directory"]),
        formats=tuple(formats),
        audit_dir=Path(flat["output.audit_dir"]),
    )


def _number(flat: Mapping[str, Any], key: str, *, positive: bool = False, minimum: float | None = None) -> float:
    value = flat.get(key)
    if isinstance(value, bool) or not isinstance(value, int | float) or not math.isfinite(value):
        raise ConfigError(f"{key} must be a finite number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{key} must be > 0, got {value}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return float(value)


def _integer(flat: Mapping[str, Any], key: str, *, minimum: int) -> int:
    value = flat.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _optional(flat: Mapping[str, Any], key: str, kind: type[int] | type[float]) -> Any:
    value = flat.get(key)
    if value is None:
        return None
    if kind is int:
        return _integer(flat, key, minimum=1)
    return _number(flat, key, positive=True)
