"""Scenario data model: 11 s of 10 Hz agent tracks in a local metric frame.

Scenarios are stored as JSON::

    {"scenario_id": "...", "origin": {"lat": .., "lon": ..}, "timestep_s": 0.1,
     "agents": [{"agent_id": "...", "class": "vehicle", "focal": true,
                 "states": [{"t": 0, "x": .., "y": .., "heading": ..}, ...]}]}

``t`` is the frame index (0..109), ``x``/``y`` are metres east/north of the
origin and ``heading`` is in radians within (-pi, pi].
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import BinaryIO, NamedTuple, Sequence

import jsonschema
import numpy as np

from .errors import OsmForecastError
from .geodesy import GeoPoint, LocalFrame, PlanePoint


class ScenarioError(OsmForecastError):
    pass


class SchemaViolation(ScenarioError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


class NoFocalAgent(ScenarioError):
    pass


class DuplicateFocal(ScenarioError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    timestep: float = 0.1
    history_len: int = 50
    future_len: int = 60
    max_modes: int = 6

    def __post_init__(self) -> None:
        if not (self.timestep > 0 and self.history_len > 0 and self.future_len > 0 and self.max_modes > 0):
            raise ValueError("scenario spec fields must be positive")

    @property
    def total_len(self) -> int:
        return self.history_len + self.future_len

    @property
    def horizon_s(self) -> float:
        return self.future_len * self.timestep


class AgentClass(str, enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    MOTORCYCLIST = "motorcyclist"
    CYCLIST = "cyclist"
    BUS = "bus"
    STATIC = "static"
    BACKGROUND = "background"
    CONSTRUCTION = "construction"
    RIDERLESS_BICYCLE = "riderless_bicycle"
    UNKNOWN = "unknown"


class AgentState(NamedTuple):
    x: float
    y: float
    heading: float

    @property
    def position(self) -> PlanePoint:
        return PlanePoint(self.x, self.y)


@dataclass(frozen=True)
class AgentTrack:
    agent_id: str
    agent_class: AgentClass
    states: tuple[AgentState | None, ...]
    focal: bool = False

    def observed_history(self, spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
        """Frame indices and ``(n, 2)`` positions of the states present before the forecast starts."""
        frames = [t for t in range(min(spec.history_len, len(self.states))) if self.states[t] is not None]
        xy = np.array([(self.states[t].x, self.states[t].y) for t in frames], dtype=float).reshape(-1, 2)
        return np.array(frames, dtype=np.int64), xy

    def future_positions(self, spec: ScenarioSpec) -> np.ndarray:
        """``(future_len, 2)`` ground-truth positions; every future state must be present."""
        fut = self.states[spec.history_len:spec.total_len]
        if len(fut) != spec.future_len or any(s is None for s in fut):
            raise ScenarioError(f"agent {self.agent_id} lacks a complete future")
        return np.array([(s.x, s.y) for s in fut], dtype=float)

    def present_positions(self) -> list[PlanePoint]:
        return [s.position for s in self.states if s is not None]


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    frame: LocalFrame
    tracks: tuple[AgentTrack, ...]
    spec: ScenarioSpec = field(default_factory=ScenarioSpec)

    def __post_init__(self) -> None:
        focal = [t for t in self.tracks if t.focal]
        if not focal:
            raise NoFocalAgent(f"scenario {self.scenario_id} has no focal agent")
        if len(focal) > 1:
            raise DuplicateFocal(f"scenario {self.scenario_id} has {len(focal)} focal agents")
        f = focal[0]
        if len(f.states) != self.spec.total_len or any(s is None for s in f.states):
            raise SchemaViolation(f"agents/{self.tracks.index(f)}/states", "focal agent must have every frame")

    @property
    def focal(self) -> AgentTrack:
        return next(t for t in self.tracks if t.focal)


SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["scenario_id", "origin", "timestep_s", "agents"],
    "properties": {
        "scenario_id": {"type": "string", "minLength": 1},
        "origin": {
            "type": "object",
            "required": ["lat", "lon"],
            "properties": {
                "lat": {"type": "number", "minimum": -90, "maximum": 90},
                "lon": {"type": "number", "minimum": -180, "maximum": 180},
            },
        },
        "timestep_s": {"type": "number", "exclusiveMinimum": 0},
        "agents": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["agent_id", "class", "focal", "states"],
                "properties": {
                    "agent_id": {"type": "string", "minLength": 1},
                    "class": {"enum": [c.value for c in AgentClass]},
                    "focal": {"type": "boolean"},
                    "states": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["t", "x", "y", "heading"],
                            "properties": {
                                "t": {"type": "integer", "minimum": 0},
                                "x": {"type": "number"},
                                "y": {"type": "number"},
                                "heading": {"type": "number", "exclusiveMinimum": -math.pi, "maximum": math.pi},
                            },
                        },
                    },
                },
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)


def _path(parts: Sequence[object]) -> str:
    return "/".join(str(p) for p in parts)


def scenario_from_dict(doc: dict, spec: ScenarioSpec | None = None) -> Scenario:
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise SchemaViolation(_path(err.absolute_path), err.message)
    spec = spec or ScenarioSpec(timestep=float(doc["timestep_s"]))
    tracks = []
    seen_ids: set[str] = set()
    for i, agent in enumerate(doc["agents"]):
        if agent["agent_id"] in seen_ids:
            raise SchemaViolation(f"agents/{i}/agent_id", f"duplicate agent id {agent['agent_id']!r}")
        seen_ids.add(agent["agent_id"])
        states: list[AgentState | None] = [None] * spec.total_len
        for j, st in enumerate(agent["states"]):
            t = st["t"]
            if t >= spec.total_len:
                raise SchemaViolation(f"agents/{i}/states/{j}/t", f"frame {t} beyond {spec.total_len - 1}")
            if states[t] is not None:
                raise SchemaViolation(f"agents/{i}/states/{j}/t", f"duplicate frame {t}")
            states[t] = AgentState(float(st["x"]), float(st["y"]), float(st["heading"]))
        tracks.append(AgentTrack(agent["agent_id"], AgentClass(agent["class"]), tuple(states), agent["focal"]))
    origin = GeoPoint(float(doc["origin"]["lat"]), float(doc["origin"]["lon"]))
    return Scenario(doc["scenario_id"], LocalFrame(origin), tuple(tracks), spec)


def load_scenario(document: bytes | str | BinaryIO) -> Scenario:
    """Parse and validate a scenario JSON document."""
    if hasattr(document, "read"):
        document = document.read()  # type: ignore[union-attr]
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("", f"invalid JSON: {exc}") from None
    return scenario_from_dict(doc)


def scenario_to_dict(scn: Scenario) -> dict:
    return {
        "scenario_id": scn.scenario_id,
        "origin": {"lat": scn.frame.origin.lat, "lon": scn.frame.origin.lon},
        "timestep_s": scn.spec.timestep,
        "agents": [
            {
                "agent_id": tr.agent_id,
                "class": tr.agent_class.value,
                "focal": tr.focal,
                "states": [
                    {"t": t, "x": s.x, "y": s.y, "heading": s.heading}
                    for t, s in enumerate(tr.states)
                    if s is not None
                ],
            }
            for tr in scn.tracks
        ],
    }


def dump_scenario(scn: Scenario) -> bytes:
    """Serialise to JSON; floats use shortest round-trip repr so :func:`load_scenario` is exact."""
    return (json.dumps(scenario_to_dict(scn), indent=1) + "\n").encode("utf-8")


def wrap_heading(angle: float) -> float:
    """Wrap radians to (-pi, pi]."""
    a = math.remainder(angle, 2.0 * math.pi)
    return math.pi if a <= -math.pi else a
