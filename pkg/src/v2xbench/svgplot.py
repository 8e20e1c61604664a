"""Dependency-free SVG line charts for sweep results (NDS' versus swept value)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


class AxisMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    axis: str = ""


@dataclass(frozen=True)
class PlotStyle:
    title: str = ""
    x_label: str = ""
    y_label: str = "NDS'"
    width: int = 640
    height: int = 420
    margin_left: int = 70
    margin_right: int = 190
    margin_top: int = 50
    margin_bottom: int = 60
    baseline: float | None = None
    baseline_label: str = "baseline"
    x_tick_labels: Sequence[str] | None = None

    @property
    def plot_left(self) -> float:
        return float(self.margin_left)

    @property
    def plot_right(self) -> float:
        return float(self.width - self.margin_right)

    @property
    def plot_top(self) -> float:
        return float(self.margin_top)

    @property
    def plot_bottom(self) -> float:
        return float(self.height - self.margin_bottom)


def _escape(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def y_to_px(y: float, style: PlotStyle) -> float:
    y = min(1.0, max(0.0, float(y)))
    return style.plot_bottom - y * (style.plot_bottom - style.plot_top)


def x_to_px(x: float, x_min: float, x_max: float, style: PlotStyle) -> float:
    if x_max == x_min:
        return 0.5 * (style.plot_left + style.plot_right)
    return style.plot_left + (float(x) - x_min) / (x_max - x_min) * (style.plot_right - style.plot_left)


def render_svg(series: Sequence[Series], style: PlotStyle = PlotStyle()) -> str:
    if not series:
        raise ValueError("nothing to plot")
    axes = {s.axis for s in series}
    xs = {tuple(float(v) for v in s.x) for s in series}
    if len(axes) > 1 or len(xs) > 1:
        raise AxisMismatchError(f"series do not share one swept axis: {sorted(axes)}")
    x_vals = sorted(xs.pop())
    x_min, x_max = x_vals[0], x_vals[-1]

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.width}" height="{style.height}" '
        f'viewBox="0 0 {style.width} {style.height}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>',
    ]
    if style.title:
        out.append(
            f'<text x="{style.width / 2:.1f}" y="28" text-anchor="middle" font-size="16" '
            f'font-family="sans-serif">{_escape(style.title)}</text>'
        )
    out.append(
        f'<rect class="plot-area" x="{style.plot_left:.2f}" y="{style.plot_top:.2f}" '
        f'width="{style.plot_right - style.plot_left:.2f}" height="{style.plot_bottom - style.plot_top:.2f}" '
        f'fill="none" stroke="#333333"/>'
    )
    for k in range(6):
        yv = k / 5
        py = y_to_px(yv, style)
        out.append(
            f'<line x1="{style.plot_left:.2f}" y1="{py:.2f}" x2="{style.plot_right:.2f}" y2="{py:.2f}" '
            f'stroke="#dddddd"/>'
        )
        out.append(
            f'<text x="{style.plot_left - 8:.2f}" y="{py + 4:.2f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{yv:.1f}</text>'
        )
    labels = list(style.x_tick_labels) if style.x_tick_labels else [f"{v:g}" for v in x_vals]
    for v, lab in zip(x_vals, labels):
        px = x_to_px(v, x_min, x_max, style)
        out.append(
            f'<text x="{px:.2f}" y="{style.plot_bottom + 18:.2f}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{_escape(lab)}</text>'
        )
    out.append(
        f'<text class="x-label" x="{(style.plot_left + style.plot_right) / 2:.2f}" y="{style.height - 18:.2f}" '
        f'text-anchor="middle" font-size="13" font-family="sans-serif">{_escape(style.x_label)}</text>'
    )
    mid_y = (style.plot_top + style.plot_bottom) / 2
    out.append(
        f'<text class="y-label" x="18" y="{mid_y:.2f}" text-anchor="middle" font-size="13" '
        f'font-family="sans-serif" transform="rotate(-90 18 {mid_y:.2f})">{_escape(style.y_label)}</text>'
    )
    if style.baseline is not None:
        py = y_to_px(style.baseline, style)
        out.append(
            f'<line class="baseline" x1="{style.plot_left:.2f}" y1="{py:.2f}" x2="{style.plot_right:.2f}" '
            f'y2="{py:.2f}" stroke="#555555" stroke-dasharray="6 4"/>'
        )
    for k, s in enumerate(series):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(
            f"{x_to_px(x, x_min, x_max, style):.2f},{y_to_px(y, style):.2f}" for x, y in zip(s.x, s.y)
        )
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')

    legend = []
    entries = [(s.label, COLORS[k % len(COLORS)], "") for k, s in enumerate(series)]
    if style.baseline is not None:
        entries.append((style.baseline_label, "#555555", ' stroke-dasharray="6 4"'))
    for k, (label, color, dash) in enumerate(entries):
        ly = style.plot_top + 10 + 20 * k
        lx = style.plot_right + 15
        legend.append(
            f'<g class="legend-entry"><line x1="{lx:.2f}" y1="{ly:.2f}" x2="{lx + 22:.2f}" y2="{ly:.2f}" '
            f'stroke="{color}" stroke-width="2"{dash}/><text x="{lx + 28:.2f}" y="{ly + 4:.2f}" font-size="11" '
            f'font-family="sans-serif">{_escape(label)}</text></g>'
        )
    out.append('<g class="legend">' + "".join(legend) + "</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, series: Sequence[Series], style: PlotStyle = PlotStyle()) -> None:
    Path(path).write_text(render_svg(series, style), encoding="utf-8")
