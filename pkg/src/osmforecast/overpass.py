"""Bounding-box map download from an Overpass-dialect endpoint, cached on disk.

The network layer is a plain callable so tests (and offline runs) can inject
a stub instead of talking to a server.
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol

from .errors import OsmForecastError
from .geodesy import GeoPoint
from .osm import OsmGraph, parse_osm_xml

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://overpass-api.de/api/interpreter"
ENDPOINT_ENV = "OSMFORECAST_OVERPASS_URL"
RETRIES = 3
BACKOFF_START_S = 1.0
TIMEOUT_S = 180.0


class NetworkFailure(OsmForecastError):
    """The request could not be completed (connection, DNS, timeout)."""


class ServerError(OsmForecastError):
    def __init__(self, status: int, body: bytes):
        self.status = status
        self.excerpt = body[:200].decode("utf-8", errors="replace")
        super().__init__(f"server returned HTTP {status}: {self.excerpt}")


@dataclass(frozen=True)
class Response:
    status: int
    body: bytes


class Transport(Protocol):
    def __call__(self, url: str, params: Mapping[str, str], timeout: float) -> Response: ...


def requests_transport(url: str, params: Mapping[str, str], timeout: float) -> Response:
    import requests

    try:
        r = requests.get(url, params=dict(params), timeout=timeout)
    except requests.RequestException as exc:
        raise NetworkFailure(str(exc)) from exc
    return Response(r.status_code, r.content)


def default_endpoint() -> str:
    return os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT


def _rounded(bbox: tuple[GeoPoint, GeoPoint]) -> tuple[float, float, float, float]:
    sw, ne = bbox
    return tuple(round(v, 6) for v in (sw.lat, sw.lon, ne.lat, ne.lon))  # type: ignore[return-value]


def bbox_query(bbox: tuple[GeoPoint, GeoPoint]) -> str:
    s, w, n, e = _rounded(bbox)
    box = f"{s:.6f},{w:.6f},{n:.6f},{e:.6f}"
    return f"[out:xml][timeout:{int(TIMEOUT_S)}];(node({box});way({box});relation({box}););(._;>;);out body;"


def cache_key(endpoint: str, bbox: tuple[GeoPoint, GeoPoint]) -> str:
    """Hex digest identifying a request; bboxes equal after rounding to 1e-6 degrees share a key."""
    s, w, n, e = _rounded(bbox)
    text = f"{endpoint}|{s:.6f},{w:.6f},{n:.6f},{e:.6f}"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write_atomic(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".osm")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fetch_osm_payload(
    bbox: tuple[GeoPoint, GeoPoint],
    endpoint: str,
    cache_dir: Path | str,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> bytes:
    """Raw OSM XML for ``bbox``, from ``cache_dir`` when present, otherwise downloaded and cached."""
    sw, ne = bbox
    if not (sw.lat <= ne.lat and sw.lon <= ne.lon):
        raise ValueError("bbox corners must be ordered (south-west, north-east)")
    cache_dir = Path(cache_dir)
    path = cache_dir / f"{cache_key(endpoint, bbox)}.osm"
    if path.exists():
        logger.debug("cache hit %s", path.name)
        return path.read_bytes()

    transport = transport or requests_transport
    params = {"data": bbox_query(bbox)}
    delay = BACKOFF_START_S
    for attempt in range(RETRIES + 1):
        try:
            resp = transport(endpoint, params, TIMEOUT_S)
            break
        except NetworkFailure as exc:
            if attempt == RETRIES:
                raise
            logger.warning("overpass request failed (%s); retrying in %.0f s", exc, delay)
            sleep(delay)
            delay *= 2
    if not 200 <= resp.status < 300:
        raise ServerError(resp.status, resp.body)
    parse_osm_xml(resp.body)  # never cache a payload that does not parse
    cache_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(path, resp.body)
    return resp.body


def fetch_map(
    bbox: tuple[GeoPoint, GeoPoint],
    endpoint: str,
    cache_dir: Path | str,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> OsmGraph:
    return parse_osm_xml(fetch_osm_payload(bbox, endpoint, cache_dir, transport, sleep))
