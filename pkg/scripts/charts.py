"""SVG charts rendered from the CSV artifacts with jinja2 templates.

Charts read only the CSV files, so a chart is a pure function of the
artifacts next to it. Coordinates are rounded to two decimals.
"""

from pathlib import Path
from typing import Optional

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from artifacts import read_region_csv, read_switch_log, read_trajectory_csv
from switching_constants import TEMPLATES_DIR

__all__ = ["render_trajectory_chart", "render_region_chart"]

WIDTH, HEIGHT = 760, 420
MARGIN = {"left": 50, "right": 150, "top": 40, "bottom": 40}

SERIES_STYLE = {
    "s": ("#2471a3", "S"),
    "i": ("#c0392b", "I"),
}
MARKER_STYLE = {
    "protection": ("#1e8449", "4 3", "owner"),
    "attack": ("#7d3c98", "1 3", "hacker"),
}

_env: Optional[Environment] = None


def _environment() -> Environment:
    global _env
    if _env is None:
        _env = Environment(
            loader=FileSystemLoader(str(TEMPLATES_DIR)),
            undefined=StrictUndefined,
            autoescape=True,
            keep_trailing_newline=True,
        )
    return _env


def _c(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, count: int, to_pos, digits: int) -> list[dict]:
    return [{"pos": _c(to_pos(v)), "label": f"{v:.{digits}f}"} for v in np.linspace(lo, hi, count)]


def render_trajectory_chart(out_path: Path, controlled_csv: Path,
                            switch_log_csv: Optional[Path] = None,
                            uncontrolled_csv: Optional[Path] = None,
                            title: str = "SIRS trajectory") -> Path:
    """S and I over time, controlled solid and uncontrolled dashed.

    Switch times from the log become vertical markers.
    """
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"], HEIGHT - MARGIN["bottom"]

    controlled = read_trajectory_csv(controlled_csv)
    t0, t1 = float(controlled["t"][0]), float(controlled["t"][-1])
    span = t1 - t0 if t1 > t0 else 1.0

    def x_pos(t):
        return left + (t - t0) / span * (right - left)

    def y_pos(y):
        return bottom - y * (bottom - top)

    def points(data, column):
        return " ".join(f"{_c(x_pos(t))},{_c(y_pos(y))}" for t, y in zip(data["t"], data[column]))

    series_list = []
    runs = [(controlled, "", "controlled" if uncontrolled_csv else "")]
    if uncontrolled_csv is not None:
        runs.append((read_trajectory_csv(uncontrolled_csv), "6 4", "uncontrolled"))
    for data, dash, tag in runs:
        for column, (color, label) in SERIES_STYLE.items():
            series_list.append({
                "color": color,
                "dash": dash,
                "label": f"{label} {tag}".strip(),
                "points": points(data, column),
            })

    markers = []
    if switch_log_csv is not None:
        for event in read_switch_log(switch_log_csv):
            color, dash, actor = MARKER_STYLE[event.track]
            markers.append({
                "pos": _c(x_pos(event.time)),
                "color": color,
                "dash": dash,
                "label": f"{actor} {event.from_level}→{event.to_level}",
            })

    svg = _environment().get_template("trajectory.svg.j2").render(
        title=title,
        width=WIDTH,
        height=HEIGHT,
        left=left,
        right=right,
        top=top,
        bottom=bottom,
        x_ticks=_ticks(t0, t1, 7, x_pos, 0 if span >= 6 else 2),
        y_ticks=_ticks(0.0, 1.0, 6, y_pos, 1),
        series_list=series_list,
        markers=markers,
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg, encoding="utf-8")
    return out_path


def render_region_chart(out_path: Path, region_csv: Path,
                        title: str = "Switching regions") -> Path:
    """Four triangle panels (one per regime) with switching nodes filled."""
    rows = read_region_csv(region_csv)
    if not rows:
        raise ValueError(f"{region_csv}: no region rows")
    s_values = sorted({r["s"] for r in rows if r["s"] > 0})
    n = int(round(1.0 / s_values[0])) if s_values else 1

    size = 150
    cell = size / n
    panels = []
    for index, (a, p) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        cells = [
            {"x": _c(r["s"] * size - cell / 2), "y": _c((1.0 - r["i"]) * size - cell / 2)}
            for r in rows
            if r["a"] == a and r["p"] == p and r["in_switching_region"]
        ]
        panels.append({
            "a": a,
            "p": p,
            "x": 40 + (index % 2) * (size + 60),
            "y": 50 + (index // 2) * (size + 50),
            "size": size,
            "cell": _c(cell),
            "count": len(cells),
            "cells": cells,
        })

    svg = _environment().get_template("regions.svg.j2").render(
        title=title,
        width=2 * size + 120,
        height=2 * size + 130,
        panels=panels,
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg, encoding="utf-8")
    return out_path
