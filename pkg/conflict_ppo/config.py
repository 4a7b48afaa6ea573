"""
Run configuration: training hyperparameters, environment selection and the
YAML file layer.

A config file is a mapping of TrainConfig keys plus an optional `env:`
section. Unknown keys anywhere are rejected.

Example:
    >>> run = parse_config({"algo": "ppo", "updates": 20, "env": {"name": "pointmass-aligned"}})
    >>> run.train.algo, run.env.name
    ('ppo', 'pointmass-aligned')
"""

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .envs import EPISODE_LENGTH, BandObjective, default_bands, validate_bands
from .exceptions import ValidationError
from .types import ALGO_MODES, ENV_NAMES, SYMMETRIC_REFERENCES, AlgoMode, SymmetricReference


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    algo: AlgoMode = "gcr"
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.005
    target_kl: float = 0.01
    learning_rate: float = 1e-3
    epochs: int = 5
    minibatches: int = 4
    num_envs: int = 64
    horizon: int = 64
    updates: int = 300
    seed: int = 0
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    adv_eps: float = 1e-8
    project_entropy: bool = False
    symmetric_reference: SymmetricReference = "original"
    cosine_every: int = 10
    log_gradient_vectors: bool = False
    record_timings: bool = False
    hidden_sizes: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.algo not in ALGO_MODES:
            raise ValidationError(
                f"unknown algo '{self.algo}'; expected one of {', '.join(ALGO_MODES)}"
            )
        if self.symmetric_reference not in SYMMETRIC_REFERENCES:
            raise ValidationError(
                f"unknown symmetric_reference '{self.symmetric_reference}'; "
                f"expected one of {', '.join(SYMMETRIC_REFERENCES)}"
            )
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValidationError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if not 0.0 < self.clip < 1.0:
            raise ValidationError(f"clip must lie in (0, 1), got {self.clip}")
        for name in ("target_kl", "learning_rate", "adv_eps"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"{name} must be positive, got {value}")
        for name in ("entropy_coef", "value_coef", "max_grad_norm"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValidationError(f"{name} must be >= 0, got {value}")
        for name in ("epochs", "minibatches", "num_envs", "horizon", "updates", "cosine_every"):
            value = getattr(self, name)
            if value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        if self.minibatches > self.num_envs * self.horizon:
            raise ValidationError(
                f"{self.minibatches} mini-batches exceed the {self.num_envs * self.horizon} "
                "samples collected per update"
            )
        if self.num_envs * self.horizon // self.minibatches < 2:
            raise ValidationError("each mini-batch needs at least 2 samples")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValidationError(f"hidden_sizes must be positive widths, got {self.hidden_sizes}")


@dataclass(frozen=True)
class EnvConfig:
    """Environment selection and band objectives."""

    name: str = "pointmass-styled"
    episode_length: int = EPISODE_LENGTH
    bands: tuple[BandObjective, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "bands", tuple(self.bands))
        if self.name not in ENV_NAMES:
            raise ValidationError(
                f"unknown environment '{self.name}'; expected one of {', '.join(ENV_NAMES)}"
            )
        if self.episode_length < 1:
            raise ValidationError("episode_length must be positive")
        if self.name != "pointmass-styled":
            if self.bands:
                raise ValidationError(f"{self.name} does not take band objectives")
            return
        if not self.bands:
            object.__setattr__(self, "bands", default_bands())
        validate_bands(self.bands)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Replace TrainConfig fields whose override is not None."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        if not changes:
            return self
        unknown = set(changes) - _TRAIN_KEYS
        if unknown:
            raise ValidationError(f"unknown override(s): {', '.join(sorted(unknown))}")
        return RunConfig(dataclasses.replace(self.train, **changes), self.env)


_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_TRAIN_KEYS = set(_TRAIN_FIELDS)
_ENV_KEYS = {"name", "episode_length", "bands"}
_BAND_KEYS = {"quantity", "level", "lo", "hi", "bonus"}


def _reject_unknown(section: str, data: dict[str, Any], accepted: set[str]) -> None:
    unknown = sorted(set(data) - accepted)
    if unknown:
        raise ValidationError(
            f"unknown {section} key(s): {', '.join(unknown)}; "
            f"accepted: {', '.join(sorted(accepted))}",
            {"unknown": unknown},
        )


def _coerce(name: str, value: Any) -> Any:
    return _typed(name, value, _TRAIN_FIELDS[name].default)


def _typed(name: str, value: Any, default: Any) -> Any:
    """Check `value` against the type of `default`; bools never pass as numbers."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{name} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise ValidationError(f"{name} must be a list of integers, got {value!r}")
        return tuple(value)
    if not isinstance(value, str):
        raise ValidationError(f"{name} must be a string, got {value!r}")
    return value


def _parse_band(entry: Any) -> BandObjective:
    if not isinstance(entry, dict):
        raise ValidationError(f"band entries must be mappings, got {entry!r}")
    _reject_unknown("band", entry, _BAND_KEYS)
    if "quantity" not in entry:
        raise ValidationError("band entry is missing 'quantity'")
    quantity = _typed("quantity", entry["quantity"], "")
    bonus = entry.get("bonus")
    if "level" in entry:
        if "lo" in entry or "hi" in entry:
            raise ValidationError("a band takes either 'level' or 'lo'/'hi', not both")
        if bonus is None:
            return BandObjective.from_level(quantity, _typed("level", entry["level"], 0))
        return BandObjective.from_level(
            quantity, _typed("level", entry["level"], 0), _typed("bonus", bonus, 0.0)
        )
    if "lo" not in entry or "hi" not in entry:
        raise ValidationError("band entry needs 'level' or both 'lo' and 'hi'")
    lo, hi = _typed("lo", entry["lo"], 0.0), _typed("hi", entry["hi"], 0.0)
    if bonus is None:
        return BandObjective(quantity, lo, hi)
    return BandObjective(quantity, lo, hi, _typed("bonus", bonus, 0.0))


def parse_config(data: dict[str, Any] | None) -> RunConfig:
    """
    Build a RunConfig from a parsed mapping.

    Raises:
        ValidationError: On unknown keys, wrongly typed values or invalid values.
    """
    if data is not None and not isinstance(data, dict):
        raise ValidationError("a config must be a mapping")
    data = dict(data or {})
    env_data = data.pop("env", None) or {}
    _reject_unknown("config", data, _TRAIN_KEYS)
    if not isinstance(env_data, dict):
        raise ValidationError("the env section must be a mapping")
    _reject_unknown("env", env_data, _ENV_KEYS)

    train = TrainConfig(**{name: _coerce(name, value) for name, value in data.items()})
    band_data = env_data.get("bands") or []
    if not isinstance(band_data, list):
        raise ValidationError(f"bands must be a list, got {band_data!r}")
    bands = tuple(_parse_band(b) for b in band_data)
    env_kwargs: dict[str, Any] = {"bands": bands}
    if "name" in env_data:
        env_kwargs["name"] = _typed("name", env_data["name"], "")
    if "episode_length" in env_data:
        env_kwargs["episode_length"] = _typed("episode_length", env_data["episode_length"], 0)
    return RunConfig(train, EnvConfig(**env_kwargs))


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a YAML config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ValidationError(f"cannot read config {path}: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ValidationError(f"config {path} is not valid YAML: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ValidationError(f"config {path} must contain a mapping")
    return parse_config(data)


def config_to_dict(run: RunConfig) -> dict[str, Any]:
    """Every effective value, in the file layout `parse_config` accepts."""
    train = dataclasses.asdict(run.train)
    train["hidden_sizes"] = list(run.train.hidden_sizes)
    train["env"] = {
        "name": run.env.name,
        "episode_length": run.env.episode_length,
        "bands": [band.to_dict() for band in run.env.bands],
    }
    return train


def dump_config(run: RunConfig, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(config_to_dict(run), sort_keys=False), encoding="utf-8"
    )
