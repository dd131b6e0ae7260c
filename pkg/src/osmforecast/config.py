"""Run configuration shared by all CLI commands."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import OsmForecastError
from .predictors import PREDICTORS

_PATH_FIELDS = ("scenarios", "map", "cache_dir", "out")


class ConfigError(OsmForecastError):
    pass


@dataclass
class RunConfig:
    receptive_field: float = 100.0
    spacing: float = 1.5
    intersection_radius: float = 10.0
    modes: int = 6
    predictor: str = "map_follow"
    scenarios: Path | None = None
    map: Path | None = None
    endpoint: str | None = None
    cache_dir: Path | None = None
    out: Path = Path("out")
    workers: int = 1

    def validate(self) -> "RunConfig":
        for name in ("receptive_field", "spacing", "intersection_radius"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not value > 0:
                raise ConfigError(f"{name} must be > 0, got {value!r}")
        if not isinstance(self.modes, int) or not 1 <= self.modes <= 6:
            raise ConfigError(f"modes must be an integer in [1, 6], got {self.modes!r}")
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"predictor must be one of {sorted(PREDICTORS)}, got {self.predictor!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers!r}")
        return self

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(data)
        for name in _PATH_FIELDS:
            if values.get(name) is not None:
                values[name] = Path(values[name])
        return cls(**values)

    def merged(self, overrides: Mapping[str, Any]) -> "RunConfig":
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_mapping(data)


def load_config_file(path: Path | str) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data
