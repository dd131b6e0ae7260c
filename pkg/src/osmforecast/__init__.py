"""OpenStreetMap vector maps and evaluation tooling for long-horizon motion forecasting."""

from .geodesy import GeoPoint, LocalFrame, PlanePoint, to_geo, to_plane, track_bbox
from .metrics import EvaluationReport, MetricResult, RoadContext, aggregate, classify_context, evaluate_agent
from .osm import Marker, OsmGraph, OsmNode, OsmRelation, OsmWay, filter_roads, parse_osm_xml, serialize_osm_xml
from .overpass import fetch_map
from .predictors import (
    Prediction,
    PredictionSet,
    predict_constant_turn,
    predict_constant_velocity,
    predict_map_following,
)
from .scenario import AgentClass, AgentTrack, Scenario, ScenarioSpec, dump_scenario, load_scenario
from .synthetic import synthesize_scenario
from .vectormap import (
    MapNode,
    MapSegment,
    RelativeScene,
    VectorMap,
    build_vector_map,
    extract_receptive_field,
    flag_intersections,
    interpolate_way,
    to_relative,
)

__version__ = "0.1.0"

__all__ = [
    "AgentClass",
    "AgentTrack",
    "EvaluationReport",
    "GeoPoint",
    "LocalFrame",
    "MapNode",
    "MapSegment",
    "Marker",
    "MetricResult",
    "OsmGraph",
    "OsmNode",
    "OsmRelation",
    "OsmWay",
    "PlanePoint",
    "Prediction",
    "PredictionSet",
    "RelativeScene",
    "RoadContext",
    "Scenario",
    "ScenarioSpec",
    "VectorMap",
    "aggregate",
    "build_vector_map",
    "classify_context",
    "dump_scenario",
    "evaluate_agent",
    "extract_receptive_field",
    "fetch_map",
    "filter_roads",
    "flag_intersections",
    "interpolate_way",
    "load_scenario",
    "parse_osm_xml",
    "predict_constant_turn",
    "predict_constant_velocity",
    "predict_map_following",
    "serialize_osm_xml",
    "synthesize_scenario",
    "to_geo",
    "to_plane",
    "to_relative",
    "track_bbox",
]

