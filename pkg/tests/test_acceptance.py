"""End-to-end acceptance checks; each test reports one verdict line (see conftest)."""

import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

from osmforecast import cli
from osmforecast.config import RunConfig
from osmforecast.geodesy import GeoPoint, LocalFrame, PlanePoint, to_geo_array, to_plane, to_plane_array
from osmforecast.metrics import aggregate, classify_context, evaluate_agent
from osmforecast.osm import filter_roads, serialize_osm_xml
from osmforecast.overpass import ENDPOINT_ENV, Response, bbox_query
from osmforecast.geodesy import track_bbox
from osmforecast.predictors import Prediction, PredictionSet
from osmforecast.scenario import dump_scenario
from osmforecast.synthetic import synthesize_scenario
from osmforecast.vectormap import (
    MapNode,
    MapSegment,
    VectorMap,
    build_vector_map,
    extract_receptive_field,
    flag_intersections,
    interpolate_way,
)


@pytest.fixture(autouse=True)
def no_endpoint_env(monkeypatch):
    monkeypatch.delenv(ENDPOINT_ENV, raising=False)


# 1 -----------------------------------------------------------------------------------


def test_criterion_01_benchmark_values_out_of_scope(tmp_path, verdict):
    """Learned-model benchmark numbers cannot be produced here; the metric triple itself is reported."""
    scen, stub = corpus(tmp_path, [("intersection", 0)])
    base = ["--scenarios", str(scen), "--out", str(tmp_path / "out")]
    codes = [cli.main(["fetch-map", *base], transport=stub), cli.main(["preprocess", *base]),
             cli.main(["evaluate", *base])]
    header = (tmp_path / "out" / "report" / "aggregate.csv").read_text().splitlines()[0]
    verdict(1, "learned-model benchmark values not reproducible at this scale; "
               "metric triple (minADE, minFDE, MR) emitted, substitute checks are criteria 2-10")
    assert codes == [0, 0, 0]
    assert header == "group,count,min_ade,min_fde,miss_rate"


# 2 -----------------------------------------------------------------------------------


def brute_force_metrics(trajs, gt, threshold=2.0):
    per_mode = []
    for tr in trajs:
        per_mode.append([math.sqrt((p[0] - g[0]) ** 2 + (p[1] - g[1]) ** 2) for p, g in zip(tr, gt)])
    ades = [sum(d) / len(d) for d in per_mode]
    best = 0
    for i, a in enumerate(ades):
        if a < ades[best]:
            best = i
    min_fde = min(d[-1] for d in per_mode)
    return ades[best], min_fde, min_fde > threshold, per_mode[best]


def test_criterion_02_metric_oracle(verdict):
    rng = random.Random(2024)
    worst = 0.0
    mismatched_flags = 0
    start = time.perf_counter()
    for i in range(500):
        k = rng.randint(1, 6)
        gt = [(rng.uniform(-200, 200), rng.uniform(-200, 200)) for _ in range(60)]
        scale = rng.choice([0.1, 1.0, 3.0, 30.0])
        trajs = [[(x + rng.gauss(0, scale), y + rng.gauss(0, scale)) for x, y in gt] for _ in range(k)]
        if i % 10 == 0 and k > 1:
            trajs[-1] = list(trajs[0])  # exact tie between modes
        pred = PredictionSet("a", tuple(Prediction(np.array(t), 1.0 / k) for t in trajs))
        r = evaluate_agent(pred, np.array(gt))
        ade, fde, missed, per_frame = brute_force_metrics(trajs, gt)
        worst = max(worst, abs(r.min_ade - ade), abs(r.min_fde - fde),
                    max(abs(a - b) for a, b in zip(r.per_frame_de, per_frame)))
        mismatched_flags += r.missed != missed
    elapsed = time.perf_counter() - start
    verdict(2, f"500 instances, max field error {worst:.2e} m, miss-flag mismatches {mismatched_flags}, "
               f"{elapsed:.2f} s")
    assert worst <= 1e-9 and mismatched_flags == 0
    assert elapsed < 5.0


# 3 -----------------------------------------------------------------------------------


def random_segment_map(rng, n):
    segs = []
    for i in range(n):
        x, y = rng.uniform(-300, 300), rng.uniform(-300, 300)
        a = rng.uniform(0, 2 * math.pi)
        segs.append(MapSegment(PlanePoint(x, y), PlanePoint(x + 1.5 * math.cos(a), y + 1.5 * math.sin(a)),
                               False, i // 25, i % 25))
    return VectorMap(segs)


def test_criterion_03_receptive_field_monotone(verdict):
    rng = random.Random(3)
    radii = np.linspace(25.0, 250.0, 10)
    nested_failures = sweep_failures = 0
    start = time.perf_counter()
    for _ in range(200):
        vmap = random_segment_map(rng, rng.randint(50, 600))
        c = (rng.uniform(-250, 250), rng.uniform(-250, 250))
        small = set(extract_receptive_field(vmap, c, 100.0))
        big = set(extract_receptive_field(vmap, c, 125.0))
        nested_failures += not small <= big
        counts = [len(extract_receptive_field(vmap, c, float(r))) for r in radii]
        sweep_failures += any(a > b for a, b in zip(counts, counts[1:]))
    elapsed = time.perf_counter() - start
    verdict(3, f"200 maps: subset violations {nested_failures}, non-monotone sweeps {sweep_failures}, "
               f"{elapsed:.2f} s")
    assert nested_failures == 0 and sweep_failures == 0
    assert elapsed < 10.0


# 4 -----------------------------------------------------------------------------------


def arc_coordinates(points, polyline):
    """Arc-length coordinate of each resampled point, located by a forward-only walk along the input."""
    cum = [0.0]
    for a, b in zip(polyline, polyline[1:]):
        cum.append(cum[-1] + math.dist(a, b))
    out, seg = [], 0
    for p in points:
        while True:
            a, b = polyline[seg], polyline[seg + 1]
            ab, ap, pb = math.dist(a, b), math.dist(a, p), math.dist(p, b)
            if ap + pb - ab <= 1e-9 * max(1.0, ab) or seg == len(polyline) - 2:
                out.append(cum[seg] + ap)
                break
            seg += 1
    return out, cum[-1]


def test_criterion_04_interpolation_uniformity(verdict):
    rng = random.Random(4)
    worst_spread = worst_gap = worst_arc = 0.0
    endpoint_failures = 0
    for _ in range(1000):
        heading = rng.uniform(-math.pi, math.pi)
        poly = [PlanePoint(rng.uniform(-100, 100), rng.uniform(-100, 100))]
        for _ in range(rng.randint(1, 10)):
            heading += rng.uniform(-2.0, 2.0)
            step = rng.uniform(0.05, 40.0)
            poly.append(PlanePoint(poly[-1].x + step * math.cos(heading), poly[-1].y + step * math.sin(heading)))
        pts = interpolate_way(poly, 1.5)
        endpoint_failures += pts[0] != poly[0] or pts[-1] != poly[-1]
        s, total = arc_coordinates(pts, poly)
        gaps = np.diff(s)
        worst_spread = max(worst_spread, float(gaps.max() - gaps.min()))
        worst_gap = max(worst_gap, float(gaps.max()))
        worst_arc = max(worst_arc, abs(float(gaps.sum()) - total))
    verdict(4, f"1000 polylines: gap spread {worst_spread:.2e} m, max gap {worst_gap:.9f} m, "
               f"arc-length error {worst_arc:.2e} m, endpoint failures {endpoint_failures}")
    assert worst_spread <= 1e-9
    assert worst_gap <= 1.5 + 1e-9
    assert worst_arc <= 1e-9
    assert endpoint_failures == 0


# 5 -----------------------------------------------------------------------------------


def test_criterion_05_intersection_boundary(verdict):
    marker = [PlanePoint(0.0, 0.0)]
    boundary = []
    for d in (9.999, 10.001):
        for ang in np.linspace(0, 2 * math.pi, 16, endpoint=False):
            node = MapNode(PlanePoint(d * math.cos(ang), d * math.sin(ang)), False, 1)
            boundary.append((d, flag_intersections([node], marker, 10.0)[0].is_intersection))
    boundary_ok = all(flag == (d < 10) for d, flag in boundary)
    rng = random.Random(5)
    mismatches = 0
    for _ in range(50):
        nodes = [MapNode(PlanePoint(rng.uniform(-150, 150), rng.uniform(-150, 150)), False, 1) for _ in range(200)]
        markers = [PlanePoint(rng.uniform(-150, 150), rng.uniform(-150, 150)) for _ in range(rng.randint(0, 30))]
        got = [n.is_intersection for n in flag_intersections(nodes, markers, 10.0)]
        want = [any(math.hypot(n.position.x - m.x, n.position.y - m.y) <= 10.0 for m in markers) for n in nodes]
        mismatches += sum(a != b for a, b in zip(got, want))
    verdict(5, f"9.999/10.001 m decided correctly: {boundary_ok}; 50x200-node all-pairs mismatches {mismatches}")
    assert boundary_ok and mismatches == 0


# 6 -----------------------------------------------------------------------------------


def test_criterion_06_projection_fidelity(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(200):
        lat0, lon0 = rng.uniform(-80, 80), rng.uniform(-180, 180)
        frame = LocalFrame(GeoPoint(float(lat0), float(lon0)))
        lat = np.clip(lat0 + rng.uniform(-1, 1, 50), -90, 90)
        lon = lon0 + rng.uniform(-1, 1, 50)
        lon = np.where(lon > 180, lon - 360, np.where(lon <= -180, lon + 360, lon))
        x, y = to_plane_array(frame, lat, lon)
        blat, blon = to_geo_array(frame, x, y)
        dlon = np.abs(np.remainder(blon - lon + 180, 360) - 180)
        worst = max(worst, float(np.max(np.abs(blat - lat))), float(np.max(dlon)))
    x = to_plane(LocalFrame(GeoPoint(0.0, 0.0)), GeoPoint(0.0, 1.0)).x
    verdict(6, f"round-trip error {worst:.2e} deg over 10000 points; 1 deg of longitude at the equator = {x:.6f} m")
    assert worst < 1e-9
    assert abs(x - 111319.490793) <= 1e-3


# 7 -----------------------------------------------------------------------------------


def suite_results(kind, seeds, predictor, receptive_field=100.0):
    cfg = RunConfig(predictor=predictor, receptive_field=receptive_field)
    out = []
    for seed in seeds:
        scn, graph, truth = synthesize_scenario(kind, seed)
        vmap = build_vector_map(filter_roads(graph), scn.frame)
        pred, _ = cli.predict_scenario(cfg, scn, vmap)
        gt = truth["focal"]
        out.append((scn, vmap, gt, evaluate_agent(pred, gt)))
    return out


def turn_angle(gt, history_end):
    h0 = math.atan2(*(history_end[-1] - history_end[-2])[::-1])
    h1 = math.atan2(*(gt[-1] - gt[-2])[::-1])
    return math.degrees(math.remainder(h1 - h0, 2 * math.pi))


def test_criterion_07_map_context_at_intersections(verdict):
    start = time.perf_counter()
    mf = suite_results("intersection", range(100), "map_follow")
    cv = suite_results("intersection", range(100), "cv")
    turning = []
    for (scn, _, gt, _), (_, _, _, r_cv) in zip(mf, cv):
        _, hist = scn.focal.observed_history(scn.spec)
        if abs(turn_angle(gt, hist)) > 45:
            turning.append(r_cv)
    mf_mr = sum(r.missed for *_, r in mf) / len(mf)
    cv_turn_mr = sum(r.missed for r in turning) / len(turning)
    mf_s = suite_results("straight", range(100), "map_follow")
    cv_s = suite_results("straight", range(100), "cv")
    ade_gap = abs(math.fsum(r.min_ade for *_, r in mf_s) - math.fsum(r.min_ade for *_, r in cv_s)) / 100
    worst_pair = max(abs(a[-1].min_ade - b[-1].min_ade) for a, b in zip(mf_s, cv_s))
    elapsed = time.perf_counter() - start
    verdict(7, f"intersection map_follow MR {mf_mr:.2f}; cv MR on {len(turning)} turning {cv_turn_mr:.2f}; "
               f"straight minADE gap {ade_gap:.2e} m (worst scenario {worst_pair:.2e}); {elapsed:.1f} s")
    assert mf_mr <= 0.10
    assert cv_turn_mr >= 0.5
    assert ade_gap < 1e-3
    assert elapsed < 60.0


# 8 -----------------------------------------------------------------------------------


def test_criterion_08_per_frame_error_growth(verdict):
    results = suite_results("curved", range(100), "cv")
    rows = [(scn.focal.agent_class, classify_context(gt, vmap), r) for scn, vmap, gt, r in results]
    curve = np.array(aggregate(rows).per_frame_curve)
    drops = int(np.sum(np.diff(curve) < 0))
    verdict(8, f"cv per-frame DE on 100 curved scenarios: {drops} decreasing steps, "
               f"first {curve[0]:.3f} m, last {curve[-1]:.3f} m")
    assert drops == 0


# 9 and 10 ------------------------------------------------------------------------------


class BboxStub:
    def __init__(self, payloads):
        self.payloads = payloads
        self.calls = 0

    def __call__(self, url, params, timeout):
        self.calls += 1
        body = self.payloads.get(params["data"])
        return Response(200, body) if body is not None else Response(404, b"no such bbox")


def corpus(root: Path, items, pad=100.0):
    scen = root / "scenarios"
    scen.mkdir(parents=True, exist_ok=True)
    payloads = {}
    for kind, seed in items:
        scn, graph, _ = synthesize_scenario(kind, seed)
        (scen / f"{scn.scenario_id}.json").write_bytes(dump_scenario(scn))
        bbox = track_bbox(scn.frame, [t.present_positions() for t in scn.tracks], pad=pad)
        payloads[bbox_query(bbox)] = serialize_osm_xml(graph)
    return scen, BboxStub(payloads)


MIXED = [(k, s) for s in range(10) for k in ("straight", "curved", "intersection")]


def test_criterion_09_end_to_end_determinism(tmp_path, verdict):
    scen, stub = corpus(tmp_path, MIXED)
    outputs = []
    for run in ("a", "b"):
        base = ["--scenarios", str(scen), "--out", str(tmp_path / run)]
        assert cli.main(["fetch-map", *base], transport=stub) == 0
        assert cli.main(["preprocess", *base]) == 0
        assert cli.main(["evaluate", *base]) == 0
        report = tmp_path / run / "report"
        outputs.append({p.name: p.read_bytes() for p in sorted(report.iterdir()) if p.suffix in (".csv", ".svg")})
    differing = sorted(name for name in outputs[0] if outputs[0][name] != outputs[1].get(name))
    verdict(9, f"{len(outputs[0])} report files over {len(MIXED)} scenarios, differing: {differing or 'none'}")
    assert outputs[0].keys() == outputs[1].keys() and len(outputs[0]) == 8
    assert not differing


def test_criterion_10_offline_pipeline(tmp_path, verdict):
    items = [(k, s) for k, s in MIXED[:10]]
    start = time.perf_counter()
    scen, stub = corpus(tmp_path, items)
    base = ["--scenarios", str(scen), "--out", str(tmp_path / "out"), "--endpoint", "http://stub.invalid"]
    codes = {
        "fetch-map": cli.main(["fetch-map", *base], transport=stub),
        "preprocess": cli.main(["preprocess", *base]),
        "predict": cli.main(["predict", *base]),
        "evaluate": cli.main(["evaluate", *base]),
    }
    elapsed = time.perf_counter() - start
    n_pred = len(list((tmp_path / "out" / "predictions").glob("*.json")))
    verdict(10, f"exit codes {codes}, {stub.calls} stub requests, {n_pred} prediction dumps, {elapsed:.1f} s")
    assert set(codes.values()) == {0}
    assert stub.calls == 10 and n_pred == 10
    assert elapsed < 30.0
