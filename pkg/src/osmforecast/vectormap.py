"""Forecasting-ready vector maps built from road-filtered OSM graphs.

Ways are projected into the scenario plane, resampled to equal arc-length
spacing (at most 1.5 m by default), flagged as intersection when close to a
stop sign or traffic signal, and stored as short segments indexed on a
uniform grid for radius queries.
"""

from __future__ import annotations

import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import OsmForecastError
from .geodesy import GeoPoint, LocalFrame, OutOfExtent, PlanePoint, to_plane, to_plane_array
from .osm import OsmGraph, ParseWarning

logger = logging.getLogger(__name__)

DEFAULT_SPACING_M = 1.5
DEFAULT_INTERSECTION_RADIUS_M = 10.0
GRID_CELL_M = 25.0
LENGTH_RTOL = 1e-9
FORMAT_TAG = "osmforecast-vectormap v1"
COLUMNS = ("start_x", "start_y", "end_x", "end_y", "is_intersection", "way_id")


class DegeneratePolyline(OsmForecastError):
    """Polyline with zero total length (or too few points) cannot be resampled."""


class VectorMapFormatError(OsmForecastError):
    pass


@dataclass(frozen=True)
class MapNode:
    position: PlanePoint
    is_intersection: bool
    source_way: int


@dataclass(frozen=True)
class MapSegment:
    start: PlanePoint
    end: PlanePoint
    is_intersection: bool
    source_way: int
    seq: int = 0  # position along the source way

    @property
    def midpoint(self) -> PlanePoint:
        return PlanePoint((self.start.x + self.end.x) / 2.0, (self.start.y + self.end.y) / 2.0)

    @property
    def length(self) -> float:
        return math.hypot(self.end.x - self.start.x, self.end.y - self.start.y)


def resample_array(points: np.ndarray, spacing: float) -> np.ndarray:
    """Equal arc-length resampling of an ``(N, 2)`` polyline.

    With ``L`` the total length and ``n`` the fewest pieces with
    ``L / n <= spacing`` (to a relative tolerance of 1e-9), returns the
    ``n + 1`` points at arc-length positions ``k * L / n``. Endpoints are
    copied from the input exactly.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise DegeneratePolyline("polyline needs at least two 2-D points")
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = float(cum[-1])
    if not total > 0:
        raise DegeneratePolyline("polyline has zero length")
    # Lengths recovered from projected coordinates carry ~1e-10 m noise, so a
    # way that is an exact multiple of the spacing must not gain a segment.
    limit = spacing * (1.0 + LENGTH_RTOL)
    n = max(1, math.ceil(total / limit))
    while total / n > limit:
        n += 1
    targets = np.arange(1, n) * (total / n)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    # side="right" never selects a zero-length input piece, so seg[idx] > 0.
    alpha = (targets - cum[idx]) / seg[idx]
    inner = pts[idx] + alpha[:, None] * (pts[idx + 1] - pts[idx])
    return np.vstack((pts[:1], inner, pts[-1:]))


def interpolate_way(polyline: Sequence[PlanePoint], spacing: float = DEFAULT_SPACING_M) -> list[PlanePoint]:
    """Resample a polyline so consecutive points are an equal arc length ``<= spacing`` apart."""
    pts = np.asarray(polyline, dtype=float)
    if pts.shape[0] >= 2 and np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
        raise DegeneratePolyline("consecutive polyline points must be distinct")
    return [PlanePoint(float(x), float(y)) for x, y in resample_array(pts, spacing)]


def intersection_mask(points: np.ndarray, markers: np.ndarray, radius: float) -> np.ndarray:
    """Boolean mask: point lies within the closed ``radius`` ball of any marker."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    markers = np.asarray(markers, dtype=float).reshape(-1, 2)
    mask = np.zeros(len(points), dtype=bool)
    for mx, my in markers:
        mask |= np.hypot(points[:, 0] - mx, points[:, 1] - my) <= radius
    return mask


def flag_intersections(
    nodes: Sequence[MapNode], markers: Sequence[PlanePoint], radius: float = DEFAULT_INTERSECTION_RADIUS_M
) -> list[MapNode]:
    """Set ``is_intersection`` on every node within ``radius`` of a marker, clear it elsewhere."""
    mask = intersection_mask(np.array([n.position for n in nodes]).reshape(-1, 2), np.array(markers), radius)
    return [replace(n, is_intersection=bool(m)) for n, m in zip(nodes, mask)]


class GridIndex:
    """Uniform-grid bucket index over 2-D points (segment midpoints)."""

    def __init__(self, points: np.ndarray, cell_size: float = GRID_CELL_M):
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        self.cell_size = float(cell_size)
        cells = np.floor(self.points / self.cell_size).astype(np.int64)
        buckets: dict[tuple[int, int], list[int]] = {}
        for i, (cx, cy) in enumerate(cells.tolist()):
            buckets.setdefault((cx, cy), []).append(i)
        self.buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}

    def __len__(self) -> int:
        return len(self.points)

    def query_radius(self, center: Sequence[float], radius: float) -> np.ndarray:
        """Sorted indices of points within the closed ball around ``center``."""
        cx, cy = float(center[0]), float(center[1])
        if not len(self.points):
            return np.zeros(0, dtype=np.int64)
        eps = 1e-9 * max(1.0, radius)
        cs = self.cell_size
        i0, i1 = math.floor((cx - radius - eps) / cs), math.floor((cx + radius + eps) / cs)
        j0, j1 = math.floor((cy - radius - eps) / cs), math.floor((cy + radius + eps) / cs)
        if (i1 - i0 + 1) * (j1 - j0 + 1) > len(self.buckets):
            parts = [v for (i, j), v in self.buckets.items() if i0 <= i <= i1 and j0 <= j <= j1]
        else:
            parts = [
                self.buckets[(i, j)]
                for i in range(i0, i1 + 1)
                for j in range(j0, j1 + 1)
                if (i, j) in self.buckets
            ]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        cand = np.concatenate(parts)
        p = self.points[cand]
        hit = np.hypot(p[:, 0] - cx, p[:, 1] - cy) <= radius
        return np.sort(cand[hit])


class VectorMap:
    """Immutable collection of map segments with a midpoint grid index.

    Segments are kept sorted by ``(source_way, seq)``.
    """

    def __init__(
        self,
        segments: Iterable[MapSegment],
        spacing: float = DEFAULT_SPACING_M,
        origin: GeoPoint | None = None,
        warnings: Sequence[ParseWarning] = (),
    ):
        self.segments: tuple[MapSegment, ...] = tuple(sorted(segments, key=lambda s: (s.source_way, s.seq)))
        self.spacing = float(spacing)
        self.origin = origin
        self.warnings = tuple(warnings)
        n = len(self.segments)
        self.starts = np.array([s.start for s in self.segments], dtype=float).reshape(n, 2)
        self.ends = np.array([s.end for s in self.segments], dtype=float).reshape(n, 2)
        self.midpoints = (self.starts + self.ends) / 2.0
        self.flags = np.array([s.is_intersection for s in self.segments], dtype=bool)
        self.way_ids = np.array([s.source_way for s in self.segments], dtype=np.int64)
        lengths = np.hypot(*(self.ends - self.starts).T) if n else np.zeros(0)
        self.max_half_length = float(lengths.max() / 2.0) if n else 0.0
        self.index = GridIndex(self.midpoints, GRID_CELL_M)
        for a in (self.starts, self.ends, self.midpoints, self.flags, self.way_ids):
            a.flags.writeable = False

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VectorMap):
            return NotImplemented
        return self.segments == other.segments and self.spacing == other.spacing and self.origin == other.origin

    def query(self, center: Sequence[float], radius: float) -> np.ndarray:
        return self.index.query_radius(center, radius)

    def subset(self, indices: Iterable[int]) -> "VectorMap":
        return VectorMap([self.segments[i] for i in indices], self.spacing, self.origin)

    def nearest_segment(self, point: Sequence[float], max_distance: float) -> tuple[int, float, float] | None:
        """Nearest segment by point-to-segment distance, if within ``max_distance``.

        Returns ``(index, distance, t)`` where ``t`` in [0, 1] locates the foot
        point on the segment. Equal distances resolve to the lower
        ``(source_way, seq)``.
        """
        cand = self.query(point, max_distance + self.max_half_length + 1e-9)
        if not len(cand):
            return None
        px, py = float(point[0]), float(point[1])
        a, b = self.starts[cand], self.ends[cand]
        d = b - a
        t = np.clip(((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        foot = a + t[:, None] * d
        dist = np.hypot(foot[:, 0] - px, foot[:, 1] - py)
        k = int(np.argmin(dist))
        if dist[k] > max_distance:
            return None
        return int(cand[k]), float(dist[k]), float(t[k])


def _pieces(refs: Sequence[int], junctions: set[int]) -> list[list[int]]:
    out, cur = [], [refs[0]]
    for i, r in enumerate(refs[1:], start=1):
        cur.append(r)
        if r in junctions and i < len(refs) - 1:
            out.append(cur)
            cur = [r]
    out.append(cur)
    return out


def build_vector_map(
    graph: OsmGraph,
    frame: LocalFrame,
    spacing: float = DEFAULT_SPACING_M,
    intersection_radius: float = DEFAULT_INTERSECTION_RADIUS_M,
    split_at_junctions: bool = True,
) -> VectorMap:
    """Turn every way of a road-filtered graph into projected, flagged segments.

    With ``split_at_junctions`` a way is cut at interior nodes shared with
    another way (or revisited by itself) before resampling, so junction nodes
    survive as exact sample positions and ways stay connected.
    Ways that fail projection or are degenerate are dropped with a warning.
    """
    warnings: list[ParseWarning] = []
    ref_count: Counter[int] = Counter()
    for way in graph.ways.values():
        ref_count.update(way.node_refs)
    junctions = {r for r, c in ref_count.items() if c > 1} if split_at_junctions else set()

    marker_xy = []
    for node in graph.marker_nodes():
        try:
            marker_xy.append(to_plane(frame, GeoPoint(node.lat, node.lon)))
        except OutOfExtent:
            warnings.append(ParseWarning("node", node.id, "marker outside projection extent"))
    markers = np.array(marker_xy, dtype=float).reshape(-1, 2)

    pieces: list[tuple[int, np.ndarray]] = []
    for wid in sorted(graph.ways):
        way = graph.ways[wid]
        try:
            lat = np.array([graph.nodes[r].lat for r in way.node_refs])
            lon = np.array([graph.nodes[r].lon for r in way.node_refs])
            x, y = to_plane_array(frame, lat, lon)
        except OutOfExtent as exc:
            warnings.append(ParseWarning("way", wid, str(exc)))
            continue
        pos = dict(zip(way.node_refs, zip(x.tolist(), y.tolist())))
        way_pieces = []
        try:
            for refs in _pieces(way.node_refs, junctions):
                pts = np.array([pos[r] for r in refs])
                keep = np.concatenate(([True], np.any(np.diff(pts, axis=0) != 0.0, axis=1)))
                way_pieces.append(resample_array(pts[keep], spacing))
        except DegeneratePolyline as exc:
            warnings.append(ParseWarning("way", wid, str(exc)))
            continue
        pieces.extend((wid, p) for p in way_pieces)

    all_points = np.vstack([p for _, p in pieces]) if pieces else np.zeros((0, 2))
    flags = intersection_mask(all_points, markers, intersection_radius)
    segments: list[MapSegment] = []
    offset = 0
    seq: Counter[int] = Counter()
    for wid, p in pieces:
        f = flags[offset:offset + len(p)]
        offset += len(p)
        for i in range(len(p) - 1):
            segments.append(
                MapSegment(
                    PlanePoint(float(p[i, 0]), float(p[i, 1])),
                    PlanePoint(float(p[i + 1, 0]), float(p[i + 1, 1])),
                    bool(f[i] or f[i + 1]),
                    wid,
                    seq[wid],
                )
            )
            seq[wid] += 1
    for w in warnings:
        logger.warning("dropped %s %d: %s", w.kind, w.id, w.reason, extra={"osm_warning": w})
    return VectorMap(segments, spacing, frame.origin, warnings)


def extract_receptive_field(vmap: VectorMap, center: Sequence[float], radius: float) -> list[MapSegment]:
    """Segments whose midpoint lies within ``radius`` of ``center``, in ``(way, seq)`` order."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return [vmap.segments[i] for i in vmap.query(center, radius)]


@dataclass(frozen=True)
class RelativeSegment:
    start: PlanePoint
    end: PlanePoint
    is_intersection: bool


@dataclass(frozen=True)
class RelativeScene:
    segments: tuple[RelativeSegment, ...]
    anchor_position: PlanePoint
    anchor_heading: float

    def to_absolute(self) -> list[tuple[PlanePoint, PlanePoint]]:
        c, s = math.cos(self.anchor_heading), math.sin(self.anchor_heading)
        ax, ay = self.anchor_position

        def back(p: PlanePoint) -> PlanePoint:
            return PlanePoint(ax + c * p.x - s * p.y, ay + s * p.x + c * p.y)

        return [(back(seg.start), back(seg.end)) for seg in self.segments]


def to_relative(
    segments: Iterable[MapSegment], anchor_position: Sequence[float], anchor_heading: float
) -> RelativeScene:
    """Express segments in the agent frame: translate to the anchor, rotate its heading onto +x."""
    if not math.isfinite(anchor_heading):
        raise ValueError("anchor heading must be finite")
    c, s = math.cos(anchor_heading), math.sin(anchor_heading)
    ax, ay = float(anchor_position[0]), float(anchor_position[1])

    def fwd(p: PlanePoint) -> PlanePoint:
        dx, dy = p[0] - ax, p[1] - ay
        return PlanePoint(c * dx + s * dy, -s * dx + c * dy)

    rel = tuple(RelativeSegment(fwd(seg.start), fwd(seg.end), seg.is_intersection) for seg in segments)
    return RelativeScene(rel, PlanePoint(ax, ay), float(anchor_heading))


def write_vector_map(vmap: VectorMap, out: TextIO | Path | str) -> None:
    """Write the column-oriented segment format (9 fractional digits per coordinate)."""
    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            write_vector_map(vmap, fh)
        return
    origin = vmap.origin
    head = f"# {FORMAT_TAG} spacing={vmap.spacing:.9f}"
    if origin is not None:
        head += f" origin_lat={origin.lat!r} origin_lon={origin.lon!r}"
    out.write(head + f" segments={len(vmap)}\n")
    out.write(",".join(COLUMNS) + "\n")
    for s in vmap.segments:
        out.write(
            f"{s.start.x:.9f},{s.start.y:.9f},{s.end.x:.9f},{s.end.y:.9f},{int(s.is_intersection)},{s.source_way}\n"
        )


def dumps_vector_map(vmap: VectorMap) -> str:
    buf = io.StringIO()
    write_vector_map(vmap, buf)
    return buf.getvalue()


def read_vector_map(src: TextIO | Path | str) -> VectorMap:
    if isinstance(src, (str, Path)):
        with open(src, encoding="utf-8") as fh:
            return read_vector_map(fh)
    header = src.readline()
    if not header.startswith(f"# {FORMAT_TAG}"):
        raise VectorMapFormatError("missing vector map header")
    fields = dict(tok.split("=", 1) for tok in header[len(f"# {FORMAT_TAG}"):].split())
    try:
        spacing = float(fields["spacing"])
        origin = GeoPoint(float(fields["origin_lat"]), float(fields["origin_lon"])) if "origin_lat" in fields else None
        expected = int(fields["segments"])
    except (KeyError, ValueError) as exc:
        raise VectorMapFormatError(f"bad header field: {exc}") from None
    if src.readline().strip() != ",".join(COLUMNS):
        raise VectorMapFormatError("missing column header")
    segments = []
    seq: Counter[int] = Counter()
    for lineno, line in enumerate(src, start=3):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        try:
            sx, sy, ex, ey = (float(v) for v in parts[:4])
            flag, wid = int(parts[4]), int(parts[5])
        except (ValueError, IndexError):
            raise VectorMapFormatError(f"line {lineno}: malformed segment row") from None
        segments.append(MapSegment(PlanePoint(sx, sy), PlanePoint(ex, ey), bool(flag), wid, seq[wid]))
        seq[wid] += 1
    if len(segments) != expected:
        raise VectorMapFormatError(f"header announces {expected} segments, found {len(segments)}")
    return VectorMap(segments, spacing, origin)
