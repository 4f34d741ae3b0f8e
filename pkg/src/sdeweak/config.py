"""Flat plain-text experiment configuration.

One ``key = value`` pair per line, ``#`` comments, keys in lower snake
case.  Lists are comma separated; step and level values accept power-of-
two tokens like ``2^-6`` so grids can be written exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class Experiment(Enum):
    MOLLIFY_SWEEP = "mollify_sweep"
    WEAK_CONVERGENCE = "weak_convergence"
    RATE_REGRESSION = "rate_regression"
    GIRSANOV_CROSSCHECK = "girsanov_crosscheck"
    NOVIKOV_REPORT = "novikov_report"


DRIFT_PARAM_KEYS = ("theta", "epsilon", "n_max", "tail_bound_tol",
                    "quad_points", "table_range")
REFERENCE_PARAM_KEYS = ("sigma", "dim")

_DEFAULT_DELTAS = tuple(2.0**-k for k in range(4, 10))


@dataclass
class ExperimentConfig:
    experiment: Experiment
    drift_name: str
    reference_name: str = "gaussian"
    T: float = 1.0
    delta_levels: tuple = _DEFAULT_DELTAS
    epsilon_levels: Optional[tuple] = None
    n_paths: int = 100_000
    seed: int = 12345
    test_functions: str = "tanh_ramp"
    output_path: Optional[str] = None
    initial: tuple = (1.0,)
    workers: int = 1
    eta: Optional[float] = None
    drift_params: dict = field(default_factory=dict)
    reference_params: dict = field(default_factory=dict)

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.delta_levels)
        if any(b >= a for a, b in zip(deltas, deltas[1:])):
            raise ConfigError("delta_levels must be strictly decreasing")
        if any(d > self.T + 1e-15 for d in deltas):
            raise ConfigError("every delta level must be <= the horizon")
        if self.T <= 0:
            raise ConfigError("horizon must be positive")
        self.delta_levels = deltas
        if self.epsilon_levels is not None:
            eps = tuple(float(e) for e in self.epsilon_levels)
            if any(b >= a for a, b in zip(eps, eps[1:])):
                raise ConfigError("epsilon_levels must be strictly decreasing")
            self.epsilon_levels = eps
        if (self.experiment is Experiment.RATE_REGRESSION
                and self.n_paths < 1000):
            raise ConfigError("rate experiments need n_paths >= 1000")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.initial = tuple(float(v) for v in self.initial)


def _parse_scalar(token: str):
    token = token.strip()
    if token.startswith("2^"):
        return 2.0 ** float(token[2:])
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return tuple(_parse_scalar(t) for t in raw.split(",") if t.strip())
    return _parse_scalar(raw)


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse a flat config file into an :class:`ExperimentConfig`."""
    values: dict = {}
    drift_params: dict = {}
    reference_params: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        key = key.strip().lower()
        value = _parse_value(raw)
        if key in DRIFT_PARAM_KEYS:
            drift_params[key] = value
        elif key in REFERENCE_PARAM_KEYS:
            reference_params[key] = value
        elif key == "experiment":
            try:
                values[key] = Experiment(str(value))
            except ValueError:
                known = ", ".join(e.value for e in Experiment)
                raise ConfigError(f"line {lineno}: unknown experiment "
                                  f"'{value}' (known: {known})") from None
        elif key == "t":
            values["T"] = float(value)
        elif key in ("delta_levels", "epsilon_levels", "initial"):
            seq = value if isinstance(value, tuple) else (value,)
            values[key] = tuple(float(v) for v in seq)
        elif key in ("n_paths", "seed", "workers"):
            values[key] = int(value)
        elif key in ("drift_name", "reference_name", "test_functions",
                     "output_path"):
            values[key] = str(value)
        elif key == "eta":
            values[key] = float(value)
        else:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    if "drift_name" not in values:
        raise ConfigError("missing required key 'drift_name'")
    try:
        return ExperimentConfig(drift_params=drift_params,
                                reference_params=reference_params, **values)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
