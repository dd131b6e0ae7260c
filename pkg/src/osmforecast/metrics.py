"""Multi-modal forecasting metrics and context-aware breakdowns."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import OsmForecastError
from .predictors import PredictionSet
from .scenario import AgentClass
from .vectormap import VectorMap

MISS_THRESHOLD_M = 2.0
CONTEXT_RADIUS_M = 10.0
CURVE_THRESHOLD_DEG = 15.0
STATIONARY_M = 1.0
MIN_STEP_M = 1e-6


class LengthMismatch(OsmForecastError):
    pass


class EmptyResults(OsmForecastError):
    pass


class RoadContext(str, enum.Enum):
    STRAIGHT = "straight"
    CURVED = "curved"
    INTERSECTION = "intersection"


@dataclass(frozen=True)
class MetricResult:
    min_ade: float
    min_fde: float
    missed: bool
    per_frame_de: np.ndarray


def evaluate_agent(pred: PredictionSet, gt: np.ndarray, miss_threshold: float = MISS_THRESHOLD_M) -> MetricResult:
    """Best-mode displacement errors of one agent, with its miss flag.

    minADE and minFDE each use their own best mode; ``per_frame_de`` comes
    from the minADE mode (lowest index on ties) and the miss flag from minFDE.
    """
    gt = np.asarray(gt, dtype=float)
    traj = pred.trajectories
    if gt.ndim != 2 or gt.shape[1] != 2 or traj.shape[1] != gt.shape[0]:
        raise LengthMismatch(f"prediction has {traj.shape[1]} frames, ground truth {gt.shape}")
    if not np.all(np.isfinite(gt)):
        raise ValueError("ground truth must be finite")
    de = np.hypot(traj[..., 0] - gt[:, 0], traj[..., 1] - gt[:, 1])  # (K, T)
    ade = de.mean(axis=1)
    best = int(np.argmin(ade))
    min_fde = float(de[:, -1].min())
    per_frame = de[best].copy()
    per_frame.flags.writeable = False
    return MetricResult(float(ade[best]), min_fde, min_fde > miss_threshold, per_frame)


def total_heading_change(points: np.ndarray, min_step: float = MIN_STEP_M) -> float:
    """Sum of absolute turning angles (radians) between consecutive non-trivial displacements."""
    d = np.diff(np.asarray(points, dtype=float), axis=0)
    d = d[np.hypot(d[:, 0], d[:, 1]) > min_step]
    if len(d) < 2:
        return 0.0
    h = np.arctan2(d[:, 1], d[:, 0])
    turn = np.remainder(np.diff(h) + math.pi, 2 * math.pi) - math.pi
    return float(np.abs(turn).sum())


def classify_context(
    gt: np.ndarray,
    vmap: VectorMap,
    intersection_radius: float = CONTEXT_RADIUS_M,
    curve_threshold_deg: float = CURVE_THRESHOLD_DEG,
) -> RoadContext:
    gt = np.asarray(gt, dtype=float)
    flagged = vmap.midpoints[vmap.flags]
    for mx, my in flagged:
        if np.any(np.hypot(gt[:, 0] - mx, gt[:, 1] - my) <= intersection_radius):
            return RoadContext.INTERSECTION
    if np.hypot(*(gt[-1] - gt[0])) < STATIONARY_M:
        return RoadContext.STRAIGHT
    if math.degrees(total_heading_change(gt)) > curve_threshold_deg:
        return RoadContext.CURVED
    return RoadContext.STRAIGHT


@dataclass(frozen=True)
class Aggregate:
    count: int
    min_ade: float
    min_fde: float
    miss_rate: float


@dataclass(frozen=True)
class EvaluationReport:
    aggregate: Aggregate
    per_frame_curve: tuple[float, ...]
    per_class: Mapping[AgentClass, Aggregate]
    per_context: Mapping[RoadContext, Aggregate]
    n_scenarios: int


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values)


def _summarise(results: list[MetricResult]) -> Aggregate:
    return Aggregate(
        len(results),
        _mean([r.min_ade for r in results]),
        _mean([r.min_fde for r in results]),
        sum(r.missed for r in results) / len(results),
    )


def aggregate(results: Iterable[tuple[AgentClass, RoadContext, MetricResult]]) -> EvaluationReport:
    """Group means; exactly rounded sums make the report independent of input order."""
    results = list(results)
    if not results:
        raise EmptyResults("nothing to aggregate")
    metrics = [r for _, _, r in results]
    frames = np.stack([r.per_frame_de for r in metrics])
    curve = tuple(_mean(frames[:, j].tolist()) for j in range(frames.shape[1]))
    per_class = {
        c: _summarise([r for cls, _, r in results if cls == c])
        for c in AgentClass
        if any(cls == c for cls, _, _ in results)
    }
    per_context = {
        c: _summarise([r for _, ctx, r in results if ctx == c])
        for c in RoadContext
        if any(ctx == c for _, ctx, _ in results)
    }
    return EvaluationReport(_summarise(metrics), curve, per_class, per_context, len(results))
