"""Command-line pipeline: fetch-map -> preprocess -> predict -> evaluate / report.

Output layout under ``--out``::

    osm/<scenario_id>.osm           fetched map payloads
    cache/<sha256>.osm              Overpass response cache (default --cache-dir)
    vectormaps/<scenario_id>.vmap   preprocessed vector maps
    predictions/<scenario_id>.json  prediction dumps
    report/                         CSV tables, SVG figures, receptive_field.csv
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

from . import overpass
from .config import ConfigError, RunConfig, load_config_file
from .errors import OsmForecastError
from .geodesy import track_bbox
from .metrics import aggregate, classify_context, evaluate_agent
from .osm import filter_roads, parse_osm_xml, serialize_osm_xml
from .predictors import PREDICTORS, PredictionSet, dump_prediction, load_prediction, run_predictor
from .report import CSV_FILES, SVG_FILES, write_report
from .scenario import Scenario, dump_scenario, load_scenario
from .synthetic import KINDS, synthesize_scenario
from .vectormap import VectorMap, build_vector_map, extract_receptive_field, read_vector_map, write_vector_map


class CliError(OsmForecastError):
    pass


def _out(cfg: RunConfig, sub: str) -> Path:
    path = cfg.out / sub
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_scenarios(cfg: RunConfig) -> list[Scenario]:
    if cfg.scenarios is None:
        raise CliError("no scenarios: pass --scenarios DIR")
    files = sorted(Path(cfg.scenarios).glob("*.json")) if Path(cfg.scenarios).is_dir() else []
    if not files:
        raise CliError(f"no scenarios found in {cfg.scenarios}")
    scenarios = [load_scenario(f.read_bytes()) for f in files]
    return sorted(scenarios, key=lambda s: s.scenario_id)


def _for_each(cfg: RunConfig, scenarios: Sequence[Scenario], fn: Callable[[Scenario], Any]) -> list[tuple[Scenario, Any]]:
    """Run ``fn`` per scenario (optionally on a thread pool); exceptions are returned, not raised."""

    def guarded(scn: Scenario):
        try:
            return fn(scn)
        except (OsmForecastError, OSError, ValueError) as exc:
            return exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(guarded, scenarios))
    else:
        results = [guarded(s) for s in scenarios]
    return list(zip(scenarios, results))


def _report_failures(results: list[tuple[Scenario, Any]]) -> int:
    failed = 0
    for scn, res in results:
        if isinstance(res, Exception):
            failed += 1
            print(f"{scn.scenario_id}: FAILED: {res}", file=sys.stderr)
    return failed


def cmd_fetch_map(cfg: RunConfig, transport: overpass.Transport | None = None) -> int:
    scenarios = _load_scenarios(cfg)
    endpoint = cfg.endpoint or overpass.default_endpoint()
    cache_dir = cfg.cache_dir or cfg.out / "cache"
    osm_dir = _out(cfg, "osm")

    def run(scn: Scenario):
        bbox = track_bbox(scn.frame, [t.present_positions() for t in scn.tracks], pad=cfg.receptive_field)
        payload = overpass.fetch_osm_payload(bbox, endpoint, cache_dir, transport)
        (osm_dir / f"{scn.scenario_id}.osm").write_bytes(payload)
        graph = parse_osm_xml(payload)
        return f"{scn.scenario_id}: {len(payload)} bytes, {len(graph.nodes)} nodes, {len(graph.ways)} ways"

    results = _for_each(cfg, scenarios, run)
    for _, res in results:
        if not isinstance(res, Exception):
            print(res)
    return 1 if _report_failures(results) else 0


def _map_source(cfg: RunConfig, scn: Scenario) -> Path:
    if cfg.map is not None:
        return cfg.map / f"{scn.scenario_id}.osm" if cfg.map.is_dir() else cfg.map
    return cfg.out / "osm" / f"{scn.scenario_id}.osm"


def cmd_preprocess(cfg: RunConfig) -> int:
    scenarios = _load_scenarios(cfg)
    vmap_dir = _out(cfg, "vectormaps")

    def run(scn: Scenario):
        graph = filter_roads(parse_osm_xml(_map_source(cfg, scn).read_bytes()))
        vmap = build_vector_map(graph, scn.frame, cfg.spacing, cfg.intersection_radius)
        write_vector_map(vmap, vmap_dir / f"{scn.scenario_id}.vmap")
        flagged = int(vmap.flags.sum())
        return f"{scn.scenario_id}: {len(vmap)} segments, {flagged} intersection, {len(vmap.warnings)} warnings"

    results = _for_each(cfg, scenarios, run)
    for _, res in results:
        if not isinstance(res, Exception):
            print(res)
    return 1 if _report_failures(results) else 0


def _vector_map(cfg: RunConfig, scn: Scenario, required: bool) -> VectorMap:
    path = cfg.out / "vectormaps" / f"{scn.scenario_id}.vmap"
    if not path.exists():
        if required:
            raise CliError(f"missing vector map {path}; run preprocess first")
        return VectorMap([], cfg.spacing, scn.frame.origin)
    return read_vector_map(path)


def predict_scenario(cfg: RunConfig, scn: Scenario, vmap: VectorMap) -> tuple[PredictionSet, int]:
    """Forecast the focal agent from the receptive field around its last observed position.

    Returns the prediction and the number of segments inside the receptive field.
    """
    focal = scn.focal
    _, xy = focal.observed_history(scn.spec)
    field = extract_receptive_field(vmap, xy[-1], cfg.receptive_field)
    scene = VectorMap(field, vmap.spacing, vmap.origin)
    return run_predictor(cfg.predictor, focal, scene, scn.spec, cfg.modes), len(field)


def cmd_predict(cfg: RunConfig) -> int:
    scenarios = _load_scenarios(cfg)
    pred_dir = _out(cfg, "predictions")

    def run(scn: Scenario):
        pred, n_field = predict_scenario(cfg, scn, _vector_map(cfg, scn, cfg.predictor == "map_follow"))
        (pred_dir / f"{scn.scenario_id}.json").write_bytes(dump_prediction(pred))
        return f"{scn.scenario_id}: {len(pred.modes)} modes, {n_field} segments in field"

    results = _for_each(cfg, scenarios, run)
    for _, res in results:
        if not isinstance(res, Exception):
            print(res)
    return 1 if _report_failures(results) else 0


def _clear_report(report_dir: Path) -> None:
    for name in CSV_FILES + SVG_FILES + ("receptive_field.csv",):
        (report_dir / name).unlink(missing_ok=True)


def _finish_report(cfg: RunConfig, results, with_field: bool) -> int:
    report_dir = _out(cfg, "report")
    _clear_report(report_dir)
    if _report_failures(results):
        return 1
    rows = [(scn.focal.agent_class, ctx, metric) for scn, (metric, ctx, _) in results]
    report = aggregate(rows)
    write_report(report, report_dir, results[0][0].spec.timestep)
    if with_field:
        lines = ["scenario_id,segments"] + [f"{scn.scenario_id},{n}" for scn, (_, _, n) in results]
        (report_dir / "receptive_field.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    agg = report.aggregate
    print(f"minADE {agg.min_ade:.3f}  minFDE {agg.min_fde:.3f}  MR {agg.miss_rate:.3f}  (n={agg.count})")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    scenarios = _load_scenarios(cfg)
    pred_dir = _out(cfg, "predictions")

    def run(scn: Scenario):
        vmap = _vector_map(cfg, scn, True)
        pred, n_field = predict_scenario(cfg, scn, vmap)
        (pred_dir / f"{scn.scenario_id}.json").write_bytes(dump_prediction(pred))
        gt = scn.focal.future_positions(scn.spec)
        return evaluate_agent(pred, gt), classify_context(gt, vmap, cfg.intersection_radius), n_field

    return _finish_report(cfg, _for_each(cfg, scenarios, run), with_field=True)


def cmd_report(cfg: RunConfig) -> int:
    scenarios = _load_scenarios(cfg)

    def run(scn: Scenario):
        path = cfg.out / "predictions" / f"{scn.scenario_id}.json"
        if not path.exists():
            raise CliError(f"missing prediction {path}; run predict first")
        pred = load_prediction(path.read_bytes())
        vmap = _vector_map(cfg, scn, True)
        gt = scn.focal.future_positions(scn.spec)
        return evaluate_agent(pred, gt), classify_context(gt, vmap, cfg.intersection_radius), 0

    return _finish_report(cfg, _for_each(cfg, scenarios, run), with_field=False)


def cmd_synthesize(kind: str, count: int, seed: int, out: Path) -> int:
    kinds = KINDS if kind == "mixed" else (kind,)
    (out / "scenarios").mkdir(parents=True, exist_ok=True)
    (out / "osm").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        scn, graph, _ = synthesize_scenario(kinds[i % len(kinds)], seed + i)  # type: ignore[arg-type]
        (out / "scenarios" / f"{scn.scenario_id}.json").write_bytes(dump_scenario(scn))
        (out / "osm" / f"{scn.scenario_id}.osm").write_bytes(serialize_osm_xml(graph))
        print(f"{scn.scenario_id}: {len(graph.nodes)} nodes, {len(graph.ways)} ways")
    return 0


def _run_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    common.add_argument("--receptive-field", dest="receptive_field", type=float, help="map radius around the agent (m)")
    common.add_argument("--spacing", type=float, help="interpolation spacing (m)")
    common.add_argument("--intersection-radius", dest="intersection_radius", type=float, help="marker radius (m)")
    common.add_argument("--predictor", choices=sorted(PREDICTORS))
    common.add_argument("--modes", type=int, help="number of modes (1-6)")
    common.add_argument("--scenarios", type=Path, help="directory of scenario JSON files")
    common.add_argument("--map", type=Path, help="OSM file, or directory of <scenario_id>.osm")
    common.add_argument("--endpoint", help=f"Overpass endpoint (env {overpass.ENDPOINT_ENV})")
    common.add_argument("--cache-dir", dest="cache_dir", type=Path)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, help="scenario worker threads")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osmforecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _run_options()
    for name, help_text in (
        ("fetch-map", "download OSM data around each scenario"),
        ("preprocess", "build vector maps from OSM data"),
        ("predict", "forecast focal agents and dump predictions"),
        ("evaluate", "score fresh predictions and write the report set"),
        ("report", "score existing prediction dumps"),
    ):
        sub.add_parser(name, parents=[common], help=help_text)
    syn = sub.add_parser("synthesize", help="write a seeded synthetic corpus")
    syn.add_argument("--kind", choices=KINDS + ("mixed",), default="mixed")
    syn.add_argument("--count", type=int, default=10)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", type=Path, required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < environment (endpoint only) < flags."""
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    cfg = RunConfig()
    if getattr(args, "config", None) is not None:
        cfg = cfg.merged(load_config_file(args.config))
    if overpass.ENDPOINT_ENV in os.environ and os.environ[overpass.ENDPOINT_ENV]:
        cfg = cfg.merged({"endpoint": os.environ[overpass.ENDPOINT_ENV]})
    return cfg.merged(flags).validate()


COMMANDS = {
    "fetch-map": cmd_fetch_map,
    "preprocess": cmd_preprocess,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None, transport: overpass.Transport | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synthesize":
            return cmd_synthesize(args.kind, args.count, args.seed, args.out)
        cfg = resolve_config(args)
        if args.command == "fetch-map":
            return cmd_fetch_map(cfg, transport)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except OsmForecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
