"""OSM XML (v0.6) ingestion.

Only the parts of the document needed downstream are kept: node positions,
way node sequences, a road flag per way and two node markers (stop signs and
traffic signals). Relations are parsed and validated but not used later on.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Mapping
from xml.parsers import expat
from xml.sax.saxutils import quoteattr

from .errors import OsmForecastError

logger = logging.getLogger(__name__)

MEMBER_KINDS = ("node", "way", "relation")


class OsmParseError(OsmForecastError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


class MalformedXml(OsmParseError):
    pass


class MissingCoordinate(OsmParseError):
    pass


class Marker(enum.Enum):
    STOP_SIGN = "StopSign"
    TRAFFIC_SIGNAL = "TrafficSignal"


_MARKER_TAGS = {
    "stop": Marker.STOP_SIGN,
    "traffic_signals": Marker.TRAFFIC_SIGNAL,
}
_MARKER_VALUES = {v: k for k, v in _MARKER_TAGS.items()}


@dataclass(frozen=True)
class ParseWarning:
    """Structured diagnostic for an element dropped or altered during parsing."""

    kind: str
    id: int
    reason: str


@dataclass(frozen=True)
class OsmNode:
    id: int
    lat: float
    lon: float
    markers: frozenset[Marker] = frozenset()


@dataclass(frozen=True)
class OsmWay:
    id: int
    node_refs: tuple[int, ...]
    is_road: bool = False


@dataclass(frozen=True)
class RelationMember:
    kind: str
    ref: int
    role: str = ""


@dataclass(frozen=True)
class OsmRelation:
    id: int
    member_refs: tuple[RelationMember, ...]


@dataclass(frozen=True)
class OsmGraph:
    nodes: Mapping[int, OsmNode]
    ways: Mapping[int, OsmWay]
    relations: Mapping[int, OsmRelation] = field(default_factory=dict)
    warnings: tuple[ParseWarning, ...] = field(default=(), compare=False)

    def marker_nodes(self) -> list[OsmNode]:
        return [n for _, n in sorted(self.nodes.items()) if n.markers]


class _Handler:
    """Expat callbacks accumulating raw elements before reference resolution."""

    def __init__(self, parser: expat.XMLParserType):
        self.parser = parser
        self.nodes: dict[int, OsmNode] = {}
        self.ways: dict[int, OsmWay] = {}
        self.relations: dict[int, OsmRelation] = {}
        self.warnings: list[ParseWarning] = []
        self.current: str | None = None
        self.depth = 0
        self.current_depth = 0
        self.attrs: dict[str, str] = {}
        self.refs: list[int] = []
        self.members: list[RelationMember] = []
        self.tags: dict[str, str] = {}

    def _pos(self) -> tuple[int, int]:
        return self.parser.CurrentLineNumber, self.parser.CurrentColumnNumber

    def _int(self, value: str | None, what: str) -> int:
        try:
            return int(value)  # type: ignore[arg-type]
        except (TypeError, ValueError):
            raise MalformedXml(f"invalid {what} {value!r}", *self._pos()) from None

    def start(self, name: str, attrs: dict[str, str]) -> None:
        self.depth += 1
        if self.depth == 1:
            if name != "osm":
                raise MalformedXml(f"root element is <{name}>, expected <osm>", *self._pos())
            return
        if self.current is None:
            if name in ("node", "way", "relation"):
                self.current = name
                self.current_depth = self.depth
                self.attrs = dict(attrs)
                self.refs, self.members, self.tags = [], [], {}
                self._id = self._int(attrs.get("id"), f"{name} id")
                if name == "node":
                    self._check_coordinates(attrs)
            return
        if self.depth != self.current_depth + 1:
            return
        if name == "tag":
            if "k" in attrs:
                self.tags[attrs["k"]] = attrs.get("v", "")
        elif name == "nd" and self.current == "way":
            self.refs.append(self._int(attrs.get("ref"), "nd ref"))
        elif name == "member" and self.current == "relation":
            kind = attrs.get("type")
            if kind not in MEMBER_KINDS:
                raise MalformedXml(f"relation {self._id} member has invalid type {kind!r}", *self._pos())
            self.members.append(RelationMember(kind, self._int(attrs.get("ref"), "member ref"), attrs.get("role", "")))

    def _check_coordinates(self, attrs: dict[str, str]) -> None:
        if "lat" not in attrs or "lon" not in attrs:
            raise MissingCoordinate(f"node {self._id} has no lat/lon", *self._pos())
        try:
            lat, lon = float(attrs["lat"]), float(attrs["lon"])
        except ValueError:
            raise MalformedXml(f"node {self._id} has non-numeric coordinates", *self._pos()) from None
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise MalformedXml(f"node {self._id} coordinates out of range ({lat}, {lon})", *self._pos())
        self._lat, self._lon = lat, lon

    def end(self, name: str) -> None:
        if self.current is not None and self.depth == self.current_depth:
            self._finish()
            self.current = None
        self.depth -= 1

    def _finish(self) -> None:
        kind, eid = self.current, self._id
        table = {"node": self.nodes, "way": self.ways, "relation": self.relations}[kind]  # type: ignore[index]
        if eid in table:
            self.warnings.append(ParseWarning(kind, eid, "duplicate id, later element ignored"))  # type: ignore[arg-type]
            return
        if kind == "node":
            markers = frozenset(
                _MARKER_TAGS[v] for k, v in self.tags.items() if k == "highway" and v in _MARKER_TAGS
            )
            self.nodes[eid] = OsmNode(eid, self._lat, self._lon, markers)
        elif kind == "way":
            self.ways[eid] = OsmWay(eid, tuple(self.refs), "highway" in self.tags)
        else:
            self.relations[eid] = OsmRelation(eid, tuple(self.members))


def parse_osm_xml(document: bytes | BinaryIO) -> OsmGraph:
    """Parse an OSM XML document into an :class:`OsmGraph`.

    Ways referencing unknown nodes (or with fewer than two nodes) and relations
    with unresolved node/way members are dropped; each drop is recorded in
    ``graph.warnings`` and logged.
    """
    data = document if isinstance(document, (bytes, bytearray)) else document.read()
    parser = expat.ParserCreate()
    handler = _Handler(parser)
    parser.StartElementHandler = handler.start
    parser.EndElementHandler = handler.end
    try:
        parser.Parse(bytes(data), True)
    except expat.ExpatError as exc:
        raise MalformedXml(expat.ErrorString(exc.code), exc.lineno, exc.offset) from None
    if handler.depth != 0 or not data:
        raise MalformedXml("truncated document")
    return _resolve(handler)


def _resolve(h: _Handler) -> OsmGraph:
    warnings = list(h.warnings)
    ways: dict[int, OsmWay] = {}
    for wid, way in h.ways.items():
        missing = [r for r in way.node_refs if r not in h.nodes]
        if missing:
            warnings.append(ParseWarning("way", wid, f"references missing node {missing[0]}"))
        elif len(way.node_refs) < 2:
            warnings.append(ParseWarning("way", wid, "fewer than two nodes"))
        else:
            ways[wid] = way
    relations: dict[int, OsmRelation] = {}
    for rid, rel in h.relations.items():
        unresolved = [
            m for m in rel.member_refs
            if (m.kind == "node" and m.ref not in h.nodes) or (m.kind == "way" and m.ref not in ways)
        ]
        if unresolved:
            m = unresolved[0]
            warnings.append(ParseWarning("relation", rid, f"references missing {m.kind} {m.ref}"))
        else:
            relations[rid] = rel
    for w in warnings[len(h.warnings):]:
        logger.warning("dropped %s %d: %s", w.kind, w.id, w.reason, extra={"osm_warning": w})
    return OsmGraph(dict(h.nodes), ways, relations, tuple(warnings))


def filter_roads(graph: OsmGraph) -> OsmGraph:
    """Restrict a graph to road ways with their nodes, keeping marker nodes as well."""
    ways = {wid: w for wid, w in graph.ways.items() if w.is_road}
    keep = {ref for w in ways.values() for ref in w.node_refs}
    nodes = {nid: n for nid, n in graph.nodes.items() if nid in keep or n.markers}
    return OsmGraph(nodes, ways, {})


def serialize_osm_xml(graph: OsmGraph) -> bytes:
    """Write a graph back to OSM XML; ``parse_osm_xml`` of the output reproduces the graph."""
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="osmforecast">']
    for nid in sorted(graph.nodes):
        n = graph.nodes[nid]
        head = f'  <node id="{n.id}" lat="{n.lat!r}" lon="{n.lon!r}"'
        if not n.markers:
            lines.append(head + "/>")
            continue
        lines.append(head + ">")
        # OSM keys are unique per element, so only one marker survives a round trip.
        marker = sorted(n.markers, key=lambda m: m.value)[0]
        lines.append(f'    <tag k="highway" v="{_MARKER_VALUES[marker]}"/>')
        lines.append("  </node>")
    for wid in sorted(graph.ways):
        w = graph.ways[wid]
        lines.append(f'  <way id="{w.id}">')
        lines.extend(f'    <nd ref="{r}"/>' for r in w.node_refs)
        if w.is_road:
            lines.append('    <tag k="highway" v="road"/>')
        lines.append("  </way>")
    for rid in sorted(graph.relations):
        rel = graph.relations[rid]
        lines.append(f'  <relation id="{rel.id}">')
        lines.extend(
            f'    <member type="{m.kind}" ref="{m.ref}" role={quoteattr(m.role)}/>' for m in rel.member_refs
        )
        lines.append("  </relation>")
    lines.append("</osm>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def build_graph(
    nodes: Iterable[OsmNode], ways: Iterable[OsmWay], relations: Iterable[OsmRelation] = ()
) -> OsmGraph:
    """Assemble a graph from already-valid elements (used by generators and tests)."""
    return OsmGraph({n.id: n for n in nodes}, {w.id: w for w in ways}, {r.id: r for r in relations})
