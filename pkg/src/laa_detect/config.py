"""Run configuration: one JSON file plus command-line overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ParseError
from .nn.training import MLP_DEFAULTS, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    day_count: int = 1550
    gamma: float = 0.1
    compromised: tuple[int, ...] | None = None
    min_compromised: int = 1
    max_compromised: int = 2
    weather_noise: float = 0.5
    noise_day: float = 0.01
    noise_hour: float = 0.01
    tariff_step: float = 0.005
    max_rounds: int = 20
    test_count: int | None = None
    validation_fraction: float = 0.15
    impact_aggregators: tuple[int, ...] = (3, 7)
    lstm: TrainConfig = field(default_factory=TrainConfig)
    mlp: TrainConfig = MLP_DEFAULTS
    network: str | None = None
    prices: str | None = None
    roster: str | None = None
    out: str = "run"

    def __post_init__(self):
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")
        if self.day_count < 10:
            raise ConfigError("day_count must be at least 10")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 1 <= self.min_compromised <= self.max_compromised:
            raise ConfigError("need 1 <= min_compromised <= max_compromised")
        if min(self.weather_noise, self.noise_day, self.noise_hour) < 0:
            raise ConfigError("noise levels must be non-negative")
        if not self.tariff_step > 0 or self.max_rounds < 1:
            raise ConfigError("tariff_step must be positive and max_rounds at least 1")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if not self.impact_aggregators:
            raise ConfigError("impact_aggregators must not be empty")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        for key in ("compromised", "impact_aggregators"):
            if data[key] is not None:
                data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(data)
        for key in ("compromised", "impact_aggregators"):
            if values.get(key) is not None:
                values[key] = tuple(int(a) for a in values[key])
        for key, default in (("lstm", TrainConfig()), ("mlp", MLP_DEFAULTS)):
            if key in values:
                values[key] = _train_config(values[key], default)
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **overrides) -> "RunConfig":
        """Replace fields whose override is not None."""
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _train_config(data, default: TrainConfig) -> TrainConfig:
    if not isinstance(data, dict):
        raise ConfigError("training settings must be a JSON object")
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown training keys: {', '.join(unknown)}")
    return dataclasses.replace(default, **data)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None
    return RunConfig.from_dict(data)
