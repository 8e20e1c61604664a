import re
import xml.etree.ElementTree as ET

import pytest

from v2xbench.svgplot import AxisMismatchError, PlotStyle, Series, render_svg, write_svg, x_to_px, y_to_px

NS = {"s": "http://www.w3.org/2000/svg"}


def parse(svg):
    return ET.fromstring(svg)


def polyline_points(root):
    out = []
    for pl in root.iter("{http://www.w3.org/2000/svg}polyline"):
        out.append([tuple(map(float, p.split(","))) for p in pl.get("points").split()])
    return out


def test_single_series_one_polyline_four_points():
    root = parse(render_svg([Series("a", [0, 0.5, 1, 2], [0.9, 0.8, 0.6, 0.3], "obj_trans")]))
    lines = polyline_points(root)
    assert len(lines) == 1
    assert len(lines[0]) == 4


def test_two_series_two_legend_entries():
    s = [Series("a", [0, 1], [0.5, 0.4], "x"), Series("b", [0, 1], [0.6, 0.2], "x")]
    root = parse(render_svg(s))
    entries = root.findall(".//s:g[@class='legend-entry']", NS)
    assert len(entries) == 2
    assert [e.find("s:text", NS).text for e in entries] == ["a", "b"]


def test_baseline_adds_rule_and_legend():
    style = PlotStyle(baseline=0.4, baseline_label="camera-only")
    root = parse(render_svg([Series("a", [0, 1], [0.5, 0.4])], style))
    assert len(root.findall(".//s:line[@class='baseline']", NS)) == 1
    assert len(root.findall(".//s:g[@class='legend-entry']", NS)) == 2


def test_y_bounds_map_to_plot_area():
    style = PlotStyle()
    root = parse(render_svg([Series("a", [0, 1, 2], [0.0, 1.0, 1.7])], style))
    (pts,) = polyline_points(root)
    area = root.find(".//s:rect[@class='plot-area']", NS)
    top = float(area.get("y"))
    bottom = top + float(area.get("height"))
    left = float(area.get("x"))
    right = left + float(area.get("width"))
    assert pts[0] == (left, bottom)
    assert pts[1][1] == top
    assert pts[2] == (right, top)  # clamped
    assert y_to_px(-0.3, style) == style.plot_bottom


def test_x_transform_degenerate_axis():
    style = PlotStyle()
    assert x_to_px(3.0, 3.0, 3.0, style) == 0.5 * (style.plot_left + style.plot_right)


def test_axis_mismatch():
    with pytest.raises(AxisMismatchError):
        render_svg([Series("a", [0, 1], [0, 1], "obj_rot"), Series("b", [0, 1], [0, 1], "obj_trans")])
    with pytest.raises(AxisMismatchError):
        render_svg([Series("a", [0, 1], [0, 1]), Series("b", [0, 2], [0, 1])])
    with pytest.raises(ValueError):
        render_svg([])


def test_labels_escaped_and_axis_titles(tmp_path):
    style = PlotStyle(title="A & B", x_label="σ <m>")
    p = tmp_path / "x.svg"
    write_svg(p, [Series("<x>", [0, 1], [0.1, 0.2])], style)
    text = p.read_text()
    root = parse(text)
    assert root.find(".//s:text[@class='x-label']", NS).text == "σ <m>"
    assert "&lt;x&gt;" in text and "A &amp; B" in text
    assert re.search(r'width="640"', text)
