"""Regenerate the BEVT golden files: python3 tests/data/make_golden.py"""

from pathlib import Path

from v2xbench.bevio import save_bev
from v2xbench.emulator import V2xFrame, V2xObject
from v2xbench.raster import GridSpec, rasterize_frame
from v2xbench.scene import ObjectState

HERE = Path(__file__).resolve().parent
GRID = GridSpec(-4.0, 4.0, -3.0, 3.0, 0.5)


def golden_frame() -> V2xFrame:
    objs = [
        V2xObject(ObjectState("a", "car", (-1.25, 0.75, -0.9), (3.0, 1.5, 1.5), 0.5, (4.0, -1.0)), 0.0, 0.0, 1.0),
        V2xObject(ObjectState("b", "pedestrian", (2.0, -1.5, -0.9), (0.8, 0.7, 1.7), -2.0, (0.5, 0.5)), 0.1, 0.5, 0.6),
        V2xObject(ObjectState("c", "cone", (2.75, 2.25, -1.4), (0.4, 0.4, 0.8), 0.0), 0.0, 0.0, 1.0),
    ]
    return V2xFrame("golden", tuple(objs))


def main() -> None:
    save_bev(rasterize_frame(golden_frame(), GRID), HERE / "golden_small.bevt")


if __name__ == "__main__":
    main()
