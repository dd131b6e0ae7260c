"""Baseline multi-modal forecasters.

``cv`` and ``ctrv`` are kinematic extrapolations. ``map_follow`` snaps the
agent to the vector map and walks the road graph forward, returning one mode
per distinct path at the agent's current speed.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OsmForecastError
from .scenario import AgentTrack, ScenarioSpec
from .vectormap import VectorMap

SNAP_RADIUS_M = 25.0
PATH_MARGIN_M = 10.0
MIN_YAW_RATE = 1e-4  # rad per frame
NODE_MERGE_M = 1e-6
MAX_EXPANSIONS = 200_000


class InsufficientHistory(OsmForecastError):
    pass


@dataclass(frozen=True)
class Prediction:
    trajectory: np.ndarray  # (future_len, 2)
    confidence: float

    def __post_init__(self) -> None:
        traj = np.asarray(self.trajectory, dtype=float)
        if traj.ndim != 2 or traj.shape[1] != 2 or not np.all(np.isfinite(traj)):
            raise ValueError("trajectory must be a finite (T, 2) array")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        traj.flags.writeable = False
        object.__setattr__(self, "trajectory", traj)


@dataclass(frozen=True)
class PredictionSet:
    agent_id: str
    modes: tuple[Prediction, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "modes", tuple(self.modes))
        if not 1 <= len(self.modes) <= 6:
            raise ValueError(f"expected 1..6 modes, got {len(self.modes)}")
        if abs(math.fsum(m.confidence for m in self.modes) - 1.0) > 1e-9:
            raise ValueError("mode confidences must sum to 1")
        conf = [m.confidence for m in self.modes]
        if any(a < b for a, b in zip(conf, conf[1:])):
            raise ValueError("modes must be sorted by descending confidence")
        if len({m.trajectory.shape for m in self.modes}) != 1:
            raise ValueError("all modes must have the same length")

    @property
    def trajectories(self) -> np.ndarray:
        """``(K, T, 2)`` stacked mode trajectories."""
        return np.stack([m.trajectory for m in self.modes])


def _future_steps(last_frame: int, spec: ScenarioSpec) -> np.ndarray:
    """Frames between the last observation and each future frame."""
    return spec.history_len + np.arange(spec.future_len) - last_frame


def _history(track: AgentTrack, spec: ScenarioSpec, need: int) -> tuple[np.ndarray, np.ndarray]:
    frames, xy = track.observed_history(spec)
    if len(frames) < need:
        raise InsufficientHistory(f"agent {track.agent_id}: {len(frames)} observed states, need {need}")
    return frames, xy


def _cv_trajectory(frames: np.ndarray, xy: np.ndarray, spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    step = (xy[-1] - xy[-2]) / float(frames[-1] - frames[-2])  # displacement per frame
    steps = _future_steps(int(frames[-1]), spec)
    return xy[-1] + steps[:, None] * step, step / spec.timestep


def predict_constant_velocity(track: AgentTrack, spec: ScenarioSpec) -> PredictionSet:
    frames, xy = _history(track, spec, 2)
    traj, _ = _cv_trajectory(frames, xy, spec)
    return PredictionSet(track.agent_id, (Prediction(traj, 1.0),))


def predict_constant_turn(track: AgentTrack, spec: ScenarioSpec) -> PredictionSet:
    """Constant speed, constant yaw-rate extrapolation from the last three observed states.

    The chord between two samples of a circular path points along the tangent
    at the chord midpoint, so the yaw rate is the chord heading change divided
    by the frames between chord midpoints.
    """
    frames, xy = _history(track, spec, 3)
    (f0, f1, f2), (p0, p1, p2) = frames[-3:], xy[-3:]
    da, db = float(f1 - f0), float(f2 - f1)
    h1 = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
    h2 = math.atan2(p2[1] - p1[1], p2[0] - p1[0])
    yaw_rate = math.remainder(h2 - h1, 2 * math.pi) / ((da + db) / 2.0)
    if abs(yaw_rate) < MIN_YAW_RATE or np.all(p1 == p0) or np.all(p2 == p1):
        return predict_constant_velocity(track, spec)
    half = yaw_rate * db / 2.0
    chord = math.hypot(*(p2 - p1))
    per_frame = chord * half / math.sin(half) / db  # arc length per frame
    heading = h2 + half
    steps = _future_steps(int(f2), spec).astype(float)
    r = per_frame / yaw_rate
    x = p2[0] + r * (np.sin(heading + yaw_rate * steps) - math.sin(heading))
    y = p2[1] + r * (math.cos(heading) - np.cos(heading + yaw_rate * steps))
    return PredictionSet(track.agent_id, (Prediction(np.column_stack((x, y)), 1.0),))


class _RoadGraph:
    """Undirected graph over interpolated node positions merged within ``NODE_MERGE_M``."""

    def __init__(self, scene: VectorMap):
        self.positions: list[tuple[float, float]] = []
        self._cells: dict[tuple[int, int], list[int]] = {}
        self.adj: dict[int, dict[int, tuple[int, int]]] = {}
        self.seg_nodes = []
        for seg in scene.segments:
            a, b = self._node(seg.start), self._node(seg.end)
            self.seg_nodes.append((a, b))
            if a == b:
                continue
            label = (seg.source_way, seg.seq)
            for u, v in ((a, b), (b, a)):
                edges = self.adj.setdefault(u, {})
                if v not in edges or label < edges[v]:
                    edges[v] = label

    def _node(self, p) -> int:
        x, y = float(p[0]), float(p[1])
        ci, cj = math.floor(x / NODE_MERGE_M), math.floor(y / NODE_MERGE_M)
        for i in (ci - 1, ci, ci + 1):
            for j in (cj - 1, cj, cj + 1):
                for k in self._cells.get((i, j), ()):
                    qx, qy = self.positions[k]
                    if math.hypot(qx - x, qy - y) <= NODE_MERGE_M:
                        return k
        k = len(self.positions)
        self.positions.append((x, y))
        self._cells.setdefault((ci, cj), []).append(k)
        return k

    def neighbours(self, node: int) -> list[tuple[tuple[int, int], int]]:
        return sorted((label, v) for v, label in self.adj.get(node, {}).items())


def _enumerate_paths(
    graph: _RoadGraph, start: np.ndarray, first: int, behind: int, target: float, k: int
) -> tuple[list[tuple[tuple, list[int]]], list[int] | None]:
    """Best-first (by arc length) walk from ``start``; returns complete paths and the longest dead end."""
    pos = graph.positions
    first_len = math.hypot(pos[first][0] - start[0], pos[first][1] - start[1])
    counter = 0
    heap = [(first_len, counter, first, (first,), frozenset((first, behind)), ())]
    complete: list[tuple[tuple, list[int]]] = []
    dead_end: tuple[float, list[int]] | None = None
    expansions = 0
    while heap and len(complete) < k and expansions < MAX_EXPANSIONS:
        length, _, node, path, visited, labels = heapq.heappop(heap)
        expansions += 1
        if length >= target:
            complete.append((labels, list(path)))
            continue
        if length > target + PATH_MARGIN_M:
            continue
        nxt = [(label, v) for label, v in graph.neighbours(node) if v not in visited]
        if not nxt:
            if dead_end is None or length > dead_end[0]:
                dead_end = (length, list(path))
            continue
        for label, v in nxt:
            counter += 1
            step = math.hypot(pos[v][0] - pos[node][0], pos[v][1] - pos[node][1])
            heapq.heappush(heap, (length + step, counter, v, path + (v,), visited | {v}, labels + (label,)))
    return complete, (dead_end[1] if dead_end else None)


def _walk(polyline: np.ndarray, distances: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(polyline, axis=0).T)
    keep = np.concatenate(([True], seg > 0))
    polyline = polyline[keep]
    cum = np.concatenate(([0.0], np.cumsum(seg[seg > 0])))
    if len(cum) < 2:
        return np.tile(polyline[0], (len(distances), 1))
    return np.column_stack((np.interp(distances, cum, polyline[:, 0]), np.interp(distances, cum, polyline[:, 1])))


def predict_map_following(
    track: AgentTrack,
    scene: VectorMap,
    spec: ScenarioSpec,
    k: int = 6,
    snap_radius: float = SNAP_RADIUS_M,
) -> PredictionSet:
    """One mode per distinct forward road path from the agent's snapped position.

    Falls back to constant velocity when the agent is stationary or farther
    than ``snap_radius`` from every segment. When no path is long enough to
    cover the horizon, the longest dead-end path is extended straight ahead.
    """
    if not 1 <= k <= 6:
        raise ValueError("k must be in 1..6")
    frames, xy = _history(track, spec, 2)
    cv, velocity = _cv_trajectory(frames, xy, spec)
    speed = float(np.hypot(*velocity))
    distances = speed * _future_steps(int(frames[-1]), spec) * spec.timestep
    target = float(distances[-1])
    fallback = PredictionSet(track.agent_id, (Prediction(cv, 1.0),))
    if not len(scene) or target <= 0:
        return fallback
    snap = scene.nearest_segment(xy[-1], snap_radius)
    if snap is None:
        return fallback
    idx, _, t = snap
    seg_a, seg_b = scene.starts[idx], scene.ends[idx]
    foot = seg_a + t * (seg_b - seg_a)
    graph = _RoadGraph(scene)
    node_a, node_b = graph.seg_nodes[idx]
    if float(np.dot(velocity, seg_b - seg_a)) >= 0:
        first, behind = node_b, node_a
    else:
        first, behind = node_a, node_b

    complete, dead_end = _enumerate_paths(graph, foot, first, behind, target, k)
    pos = np.array(graph.positions)
    if complete:
        # Order by traversed (way, seq) labels: independent of coordinates, so rigid motions keep it.
        paths = [np.vstack((foot, pos[p])) for _, p in sorted(complete, key=lambda c: c[0])]
    elif dead_end is not None:
        line = np.vstack((foot, pos[dead_end]))
        tail = line[-1] - line[-2] if len(line) > 1 and np.any(line[-1] != line[-2]) else velocity
        tail = tail / np.hypot(*tail)
        paths = [np.vstack((line, line[-1] + tail * (target + 1.0)))]
    else:
        return fallback
    conf = 1.0 / len(paths)
    return PredictionSet(track.agent_id, tuple(Prediction(_walk(p, distances), conf) for p in paths))


PREDICTORS: dict[str, Callable[..., PredictionSet]] = {
    "cv": lambda track, scene, spec, k: predict_constant_velocity(track, spec),
    "ctrv": lambda track, scene, spec, k: predict_constant_turn(track, spec),
    "map_follow": lambda track, scene, spec, k: predict_map_following(track, scene, spec, k),
}


def run_predictor(name: str, track: AgentTrack, scene: VectorMap, spec: ScenarioSpec, k: int = 6) -> PredictionSet:
    try:
        fn = PREDICTORS[name]
    except KeyError:
        raise ValueError(f"unknown predictor {name!r}; choose from {sorted(PREDICTORS)}") from None
    return fn(track, scene, spec, k)


def prediction_to_dict(pred: PredictionSet) -> dict:
    return {
        "agent_id": pred.agent_id,
        "modes": [
            {"confidence": m.confidence, "points": [{"x": float(x), "y": float(y)} for x, y in m.trajectory]}
            for m in pred.modes
        ],
    }


def dump_prediction(pred: PredictionSet) -> bytes:
    return (json.dumps(prediction_to_dict(pred), indent=1) + "\n").encode("utf-8")


def load_prediction(document: bytes | str) -> PredictionSet:
    doc = json.loads(document)
    modes = tuple(
        Prediction(np.array([(p["x"], p["y"]) for p in m["points"]], dtype=float), float(m["confidence"]))
        for m in doc["modes"]
    )
    return PredictionSet(str(doc["agent_id"]), modes)
