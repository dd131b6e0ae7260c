"""CSV tables and SVG figures for an :class:`EvaluationReport`.

Column layout (fixed, all metric values with 6 decimals):

* ``aggregate.csv``   - ``group,count,min_ade,min_fde,miss_rate`` (single row ``all``)
* ``per_class.csv``   - ``class,count,min_ade,min_fde,miss_rate``
* ``per_context.csv`` - ``context,count,min_ade,min_fde,miss_rate``
* ``per_frame.csv``   - ``frame,time_s,mean_de``
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from .metrics import Aggregate, EvaluationReport

CSV_FILES = ("aggregate.csv", "per_class.csv", "per_context.csv", "per_frame.csv")
SVG_FILES = ("per_frame_de.svg", "per_class.svg", "per_context.svg")
METRIC_COLUMNS = ("count", "min_ade", "min_fde", "miss_rate")


def _row(name: str, agg: Aggregate) -> str:
    return f"{name},{agg.count},{agg.min_ade:.6f},{agg.min_fde:.6f},{agg.miss_rate:.6f}"


def _table(key: str, groups: Mapping, label=lambda k: k.value) -> str:
    lines = [",".join((key,) + METRIC_COLUMNS)]
    lines += [_row(label(k), v) for k, v in groups.items()]
    return "\n".join(lines) + "\n"


def report_tables(report: EvaluationReport, timestep: float = 0.1) -> dict[str, str]:
    frames = ["frame,time_s,mean_de"] + [
        f"{i},{(i + 1) * timestep:.1f},{v:.6f}" for i, v in enumerate(report.per_frame_curve)
    ]
    return {
        "aggregate.csv": _table("group", {"all": report.aggregate}, label=str),
        "per_class.csv": _table("class", report.per_class),
        "per_context.csv": _table("context", report.per_context),
        "per_frame.csv": "\n".join(frames) + "\n",
    }


_W, _H = 640, 400
_L, _R, _T, _B = 70, 20, 40, 60


def _svg(title: str, body: list[str]) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">'
        f"{escape(title)}</text>",
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _nice_max(v: float) -> float:
    """Smallest 1/2/2.5/5 x 10^k value >= v, used as the y-axis top."""
    if v <= 0:
        return 1.0
    scale = 10.0 ** math.floor(math.log10(v))
    for step in (1, 2, 2.5, 5):
        if step * scale >= v:
            return step * scale
    return 10 * scale


def _axes(y_max: float, y_label: str, x_label: str) -> list[str]:
    x0, x1, y0, y1 = _L, _W - _R, _H - _B, _T
    out = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for i in range(5):
        v = y_max * i / 4
        y = y0 - (y0 - y1) * i / 4
        out.append(f'<line x1="{x0 - 4}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        out.append(
            f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.2f}</text>'
        )
    out.append(
        f'<text x="18" y="{(y0 + y1) / 2:.1f}" transform="rotate(-90 18 {(y0 + y1) / 2:.1f})" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{escape(y_label)}</text>'
    )
    out.append(
        f'<text x="{(x0 + x1) / 2:.1f}" y="{_H - 14}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{escape(x_label)}</text>'
    )
    return out


def line_chart(values: Sequence[float], title: str, y_label: str, x_label: str) -> str:
    y_max = _nice_max(max(values, default=0.0))
    x0, x1, y0, y1 = _L, _W - _R, _H - _B, _T
    n = max(len(values) - 1, 1)
    pts = " ".join(
        f"{x0 + (x1 - x0) * i / n:.2f},{y0 - (y0 - y1) * v / y_max:.2f}" for i, v in enumerate(values)
    )
    body = _axes(y_max, y_label, x_label)
    for i in range(0, len(values), 10):
        x = x0 + (x1 - x0) * i / n
        body.append(
            f'<text x="{x:.2f}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{i + 1}</text>'
        )
    body.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    return _svg(title, body)


def bar_chart(groups: Mapping[str, Aggregate], title: str) -> str:
    """Grouped bars of minADE and minFDE per group."""
    labels = list(groups)
    y_max = _nice_max(max((max(a.min_ade, a.min_fde) for a in groups.values()), default=0.0))
    x0, x1, y0, y1 = _L, _W - _R, _H - _B, _T
    body = _axes(y_max, "error (m)", "")
    slot = (x1 - x0) / max(len(labels), 1)
    bw = slot * 0.35
    colours = (("min_ade", "#1f77b4"), ("min_fde", "#ff7f0e"))
    for i, name in enumerate(labels):
        agg = groups[name]
        for j, (field, colour) in enumerate(colours):
            v = getattr(agg, field)
            h = (y0 - y1) * v / y_max
            x = x0 + slot * i + slot * 0.15 + bw * j
            body.append(f'<rect x="{x:.2f}" y="{y0 - h:.2f}" width="{bw:.2f}" height="{h:.2f}" fill="{colour}"/>')
        body.append(
            f'<text x="{x0 + slot * (i + 0.5):.2f}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{escape(name)} (n={agg.count}, MR={agg.miss_rate:.2f})</text>'
        )
    for j, (field, colour) in enumerate(colours):
        y = _T + 6 + 16 * j
        body.append(f'<rect x="{x1 - 90}" y="{y}" width="10" height="10" fill="{colour}"/>')
        body.append(f'<text x="{x1 - 75}" y="{y + 9}" font-family="sans-serif" font-size="11">{field}</text>')
    return _svg(title, body)


def report_figures(report: EvaluationReport) -> dict[str, str]:
    return {
        "per_frame_de.svg": line_chart(
            report.per_frame_curve, "Displacement error per future frame", "mean DE (m)", "future frame (10 Hz)"
        ),
        "per_class.svg": bar_chart({k.value: v for k, v in report.per_class.items()}, "Error by agent class"),
        "per_context.svg": bar_chart({k.value: v for k, v in report.per_context.items()}, "Error by road context"),
    }


def write_report(report: EvaluationReport, out_dir: Path | str, timestep: float = 0.1) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in {**report_tables(report, timestep), **report_figures(report)}.items():
        path = out_dir / name
        path.write_text(text, encoding="utf-8", newline="\n")
        written.append(path)
    return written
