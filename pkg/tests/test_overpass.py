import hashlib
from pathlib import Path

import pytest

from osmforecast.geodesy import GeoPoint
from osmforecast.osm import MalformedXml, parse_osm_xml
from osmforecast.overpass import (
    NetworkFailure,
    Response,
    ServerError,
    bbox_query,
    cache_key,
    fetch_map,
    fetch_osm_payload,
)

FIXTURE = Path(__file__).parent / "fixtures" / "city_block.osm"
BBOX = (GeoPoint(32.879, -117.235), GeoPoint(32.881, -117.233))
URL = "http://stub.invalid/api"


class StubTransport:
    def __init__(self, body=None, status=200, failures=0):
        self.body = FIXTURE.read_bytes() if body is None else body
        self.status = status
        self.failures = failures
        self.calls = []

    def __call__(self, url, params, timeout):
        self.calls.append((url, dict(params)))
        if self.failures:
            self.failures -= 1
            raise NetworkFailure("connection refused")
        return Response(self.status, self.body)


def test_download_then_cache_hit(tmp_path):
    stub = StubTransport()
    first = fetch_osm_payload(BBOX, URL, tmp_path, stub)
    assert len(stub.calls) == 1
    assert stub.calls[0][1]["data"] == bbox_query(BBOX)
    before = {p: p.read_bytes() for p in tmp_path.iterdir()}
    second = fetch_osm_payload(BBOX, URL, tmp_path, stub)
    assert len(stub.calls) == 1
    assert first == second == FIXTURE.read_bytes()
    assert {p: p.read_bytes() for p in tmp_path.iterdir()} == before


def test_fetch_map_equals_direct_parse(tmp_path):
    assert fetch_map(BBOX, URL, tmp_path, StubTransport()) == parse_osm_xml(FIXTURE.read_bytes())


def test_query_contains_rounded_box():
    q = bbox_query(BBOX)
    assert "32.879000,-117.235000,32.881000,-117.233000" in q
    assert q.startswith("[out:xml]")


def test_cache_key_rounding():
    nudged = (GeoPoint(32.879 + 2e-8, -117.235), GeoPoint(32.881, -117.233 - 3e-8))
    assert cache_key(URL, nudged) == cache_key(URL, BBOX)
    moved = (GeoPoint(32.879 + 5e-6, -117.235), BBOX[1])
    assert cache_key(URL, moved) != cache_key(URL, BBOX)
    assert cache_key(URL + "2", BBOX) != cache_key(URL, BBOX)
    expected = hashlib.sha256(f"{URL}|32.879000,-117.235000,32.881000,-117.233000".encode()).hexdigest()
    assert cache_key(URL, BBOX) == expected


def test_retries_with_doubling_backoff(tmp_path):
    stub = StubTransport(failures=3)
    sleeps = []
    fetch_osm_payload(BBOX, URL, tmp_path, stub, sleep=sleeps.append)
    assert len(stub.calls) == 4
    assert sleeps == [1.0, 2.0, 4.0]


def test_gives_up_after_retries(tmp_path):
    stub = StubTransport(failures=10)
    sleeps = []
    with pytest.raises(NetworkFailure):
        fetch_osm_payload(BBOX, URL, tmp_path, stub, sleep=sleeps.append)
    assert len(stub.calls) == 4 and sleeps == [1.0, 2.0, 4.0]
    assert list(tmp_path.iterdir()) == []


def test_server_error_carries_status_and_excerpt(tmp_path):
    stub = StubTransport(body=b"rate limited " * 50, status=429)
    with pytest.raises(ServerError) as info:
        fetch_osm_payload(BBOX, URL, tmp_path, stub)
    assert info.value.status == 429
    assert info.value.excerpt.startswith("rate limited") and len(info.value.excerpt) <= 200
    assert list(tmp_path.iterdir()) == []


def test_unparseable_payload_not_cached(tmp_path):
    with pytest.raises(MalformedXml):
        fetch_osm_payload(BBOX, URL, tmp_path, StubTransport(body=b"<html>oops</html>"))
    assert list(tmp_path.iterdir()) == []
    stub = StubTransport()
    fetch_osm_payload(BBOX, URL, tmp_path, stub)
    assert len(stub.calls) == 1


def test_bbox_must_be_ordered(tmp_path):
    with pytest.raises(ValueError):
        fetch_osm_payload((BBOX[1], BBOX[0]), URL, tmp_path, StubTransport())
