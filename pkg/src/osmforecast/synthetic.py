"""Seeded synthetic scenarios with matching OSM maps.

Three road contexts are generated:

* ``straight`` - one straight road way, focal agent at constant velocity.
* ``curved`` - lead-in, 90 degree arc, lead-out; the focal agent drives the
  exact circle so its heading turns by a total of 90 degrees over 11 s.
* ``intersection`` - an approach way meeting three branch ways (left,
  straight, right) at a stop-sign node; the focal agent reaches the junction
  during the forecast window and takes one branch.

Random parameters are drawn from ``numpy.random.default_rng(seed)`` and
rounded to fixed precision before any geometry is computed.
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np

from .geodesy import GeoPoint, LocalFrame, PlanePoint, to_geo
from .osm import Marker, OsmGraph, OsmNode, OsmWay, build_graph
from .scenario import AgentClass, AgentState, AgentTrack, Scenario, ScenarioSpec, wrap_heading

Kind = Literal["straight", "curved", "intersection"]
KINDS: tuple[Kind, ...] = ("straight", "curved", "intersection")
BRANCHES = ("left", "straight", "right")

SYNTHETIC_ORIGIN = GeoPoint(32.8801, -117.2340)
CURVE_TURN_RAD = math.pi / 2
BRANCH_LENGTH_M = 150.0
FOCAL_CLASSES = (AgentClass.VEHICLE, AgentClass.VEHICLE, AgentClass.VEHICLE, AgentClass.BUS,
                 AgentClass.MOTORCYCLIST, AgentClass.CYCLIST)


class _MapBuilder:
    def __init__(self, frame: LocalFrame):
        self.frame = frame
        self.nodes: list[OsmNode] = []
        self.ways: list[OsmWay] = []
        self._next_node = 1000
        self._next_way = 1

    def node(self, p, markers: frozenset[Marker] = frozenset()) -> int:
        g = to_geo(self.frame, PlanePoint(float(p[0]), float(p[1])))
        nid = self._next_node
        self._next_node += 1
        self.nodes.append(OsmNode(nid, g.lat, g.lon, markers))
        return nid

    def way(self, refs: list[int], is_road: bool = True) -> int:
        wid = self._next_way
        self._next_way += 1
        self.ways.append(OsmWay(wid, tuple(refs), is_road))
        return wid

    def polyline(self, points, first: int | None = None) -> int:
        refs = [first] if first is not None else []
        refs += [self.node(p) for p in (points[1:] if first is not None else points)]
        return self.way(refs)

    def building(self, center, size: float = 8.0) -> None:
        cx, cy = center
        corners = [(cx, cy), (cx + size, cy), (cx + size, cy + size), (cx, cy + size)]
        refs = [self.node(c) for c in corners]
        self.way(refs + refs[:1], is_road=False)

    def graph(self) -> OsmGraph:
        return build_graph(self.nodes, self.ways)


def _unit(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def _line(a: np.ndarray, b: np.ndarray, step: float) -> list[np.ndarray]:
    n = max(1, math.ceil(float(np.hypot(*(b - a))) / step))
    return [a + (b - a) * (k / n) for k in range(n + 1)]


def _track(agent_id: str, cls: AgentClass, positions, headings, present=None, focal=False) -> AgentTrack:
    states = []
    for t, (p, h) in enumerate(zip(positions, headings)):
        keep = present is None or present[0] <= t < present[1]
        states.append(AgentState(float(p[0]), float(p[1]), wrap_heading(float(h))) if keep else None)
    return AgentTrack(agent_id, cls, tuple(states), focal)


def synthesize_scenario(
    kind: Kind, seed: int, spec: ScenarioSpec | None = None
) -> tuple[Scenario, OsmGraph, dict[str, np.ndarray]]:
    """Build a scenario with its OSM map, plus ground-truth futures of the fully observed agents."""
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}")
    spec = spec or ScenarioSpec()
    rng = np.random.default_rng(seed)
    frame = LocalFrame(SYNTHETIC_ORIGIN)
    mb = _MapBuilder(frame)
    n = spec.total_len
    dt = spec.timestep
    t = np.arange(n) * dt
    history_end = (spec.history_len - 1) * dt

    speed = round(float(rng.uniform(6.0, 12.0)), 2)
    theta = round(float(rng.uniform(-math.pi, math.pi)), 4)
    offset = np.round(rng.uniform(-50.0, 50.0, size=2), 2)
    cls = FOCAL_CLASSES[int(rng.integers(len(FOCAL_CLASSES)))]
    u = _unit(theta)
    left = np.array([-u[1], u[0]])

    if kind == "straight":
        start = offset
        mb.polyline(_line(start - 60.0 * u, start + (speed * t[-1] + 120.0) * u, 40.0))
        pos = start + np.outer(speed * t, u)
        heading = np.full(n, theta)
    elif kind == "curved":
        sign = 1.0 if rng.integers(2) else -1.0
        rate = CURVE_TURN_RAD / t[-1]
        radius = speed / rate
        arc_start = offset
        center = arc_start + sign * radius * left
        phi0 = math.atan2(*(arc_start - center)[::-1])
        arc_nodes = [center + radius * _unit(phi0 + sign * CURVE_TURN_RAD * k / 30) for k in range(31)]
        arc_end = arc_nodes[-1]
        out_dir = _unit(theta + sign * CURVE_TURN_RAD)
        pts = [arc_start - 60.0 * u] + arc_nodes + [arc_end + 80.0 * out_dir, arc_end + 160.0 * out_dir]
        mb.polyline(pts)
        ang = phi0 + sign * rate * t
        pos = center + radius * np.column_stack((np.cos(ang), np.sin(ang)))
        heading = theta + sign * rate * t
    else:
        lead = round(float(rng.uniform(0.5, 2.5)), 2)
        branch = int(rng.integers(len(BRANCHES)))
        junction = offset
        reach = speed * (history_end + lead)
        stop = mb.node(junction, frozenset({Marker.STOP_SIGN}))
        approach = _line(junction - (reach + 40.0) * u, junction, 40.0)
        mb.way([mb.node(p) for p in approach[:-1]] + [stop])
        dirs = (left, u, -left)
        for d in dirs:
            mb.polyline(_line(junction, junction + BRANCH_LENGTH_M * d, 50.0), first=stop)
        s = speed * t - reach
        d = dirs[branch]
        pos = np.where((s < 0)[:, None], junction + np.outer(s, u), junction + np.outer(s, d))
        branch_heading = math.atan2(d[1], d[0])
        heading = np.where(s < 0, theta, branch_heading)

    focal = _track("focal", cls, pos, heading, focal=True)

    # A pedestrian on the sidewalk, observed only part of the time, and a parked car.
    walk_speed = round(float(rng.uniform(1.0, 1.6)), 2)
    appear = int(rng.integers(0, 20))
    ped_start = offset + 6.0 * left - 10.0 * u
    ped_pos = ped_start + np.outer(walk_speed * t, u)
    ped = _track("ped_1", AgentClass.PEDESTRIAN, ped_pos, np.full(n, theta), present=(appear, n - 15))
    parked_at = offset - 4.0 * left + round(float(rng.uniform(10.0, 40.0)), 2) * u
    parked = _track("veh_2", AgentClass.VEHICLE, np.tile(parked_at, (n, 1)), np.full(n, theta))

    mb.building(offset + 20.0 * left + 15.0 * u)
    scn = Scenario(f"{kind}_{seed:04d}", frame, (focal, ped, parked), spec)
    truth = {
        tr.agent_id: tr.future_positions(spec)
        for tr in scn.tracks
        if all(st is not None for st in tr.states[spec.history_len:spec.total_len])
    }
    return scn, mb.graph(), truth
