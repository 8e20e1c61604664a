"""Scene/object data model, JSON-Lines scene files and a synthetic scene generator.

All geometry lives in the ego frame: ego at the origin, x forward, y left,
yaw counter-clockwise positive with 0 along +x.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ObjectClass(enum.IntEnum):
    CAR = 0
    TRUCK = 1
    BUS = 2
    BICYCLE = 3
    MOTORCYCLE = 4
    TRAILER = 5
    CONSTRUCTION = 6
    PEDESTRIAN = 7
    CONE = 8
    BARRIER = 9

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "str | int | ObjectClass") -> "ObjectClass":
        if isinstance(value, ObjectClass):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown object class {value!r}") from None


CLASS_NAMES: tuple[str, ...] = tuple(c.label for c in ObjectClass)

# (length, width, height) ranges in meters; length runs along the heading.
CLASS_SIZE_RANGES: dict[ObjectClass, tuple[tuple[float, float], ...]] = {
    ObjectClass.CAR: ((3.5, 5.5), (1.6, 2.1), (1.4, 1.9)),
    ObjectClass.TRUCK: ((6.0, 10.0), (2.2, 2.8), (2.5, 3.8)),
    ObjectClass.BUS: ((10.0, 13.0), (2.5, 3.0), (3.0, 3.8)),
    ObjectClass.BICYCLE: ((1.5, 2.0), (0.5, 0.8), (1.0, 1.6)),
    ObjectClass.MOTORCYCLE: ((1.8, 2.4), (0.7, 1.0), (1.2, 1.6)),
    ObjectClass.TRAILER: ((6.0, 12.0), (2.3, 2.9), (3.0, 4.0)),
    ObjectClass.CONSTRUCTION: ((4.0, 8.0), (2.2, 3.2), (2.5, 3.5)),
    ObjectClass.PEDESTRIAN: ((0.5, 1.0), (0.5, 0.9), (1.5, 1.9)),
    ObjectClass.CONE: ((0.3, 0.5), (0.3, 0.5), (0.6, 1.1)),
    ObjectClass.BARRIER: ((1.5, 3.0), (0.4, 0.7), (0.8, 1.2)),
}

CLASS_MAX_SPEED: dict[ObjectClass, float] = {
    ObjectClass.CAR: 15.0,
    ObjectClass.TRUCK: 12.0,
    ObjectClass.BUS: 12.0,
    ObjectClass.BICYCLE: 6.0,
    ObjectClass.MOTORCYCLE: 15.0,
    ObjectClass.TRAILER: 10.0,
    ObjectClass.CONSTRUCTION: 3.0,
    ObjectClass.PEDESTRIAN: 2.0,
    ObjectClass.CONE: 0.0,
    ObjectClass.BARRIER: 0.0,
}

# Sensor height above ground for the ego frame; object z is its box center.
EGO_GROUND_Z = -1.8


def nominal_size(cls: ObjectClass) -> tuple[float, float, float]:
    """Mean of the class size envelope, used when a detector carries no size."""
    return tuple(0.5 * (lo + hi) for lo, hi in CLASS_SIZE_RANGES[ObjectClass(cls)])


def wrap_yaw(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    angle = float(angle)
    if not math.isfinite(angle):
        raise ValueError(f"yaw must be finite, got {angle}")
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def wrap_yaw_array(angles: np.ndarray) -> np.ndarray:
    angles = np.asarray(angles, dtype=np.float64)
    if not np.all(np.isfinite(angles)):
        raise ValueError("yaw must be finite")
    inside = (angles > -np.pi) & (angles <= np.pi)
    wrapped = np.remainder(angles + np.pi, 2.0 * np.pi) - np.pi
    # remainder maps onto [-pi, pi); move the lower boundary up
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    # in-range angles pass through untouched (the shift above is not exact)
    return np.where(inside, angles, wrapped)


class SceneValidationError(ValueError):
    pass


class SceneParseError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectState:
    id: str
    cls: ObjectClass
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "cls", ObjectClass.parse(self.cls))
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        velocity = tuple(float(v) for v in self.velocity)
        if len(center) != 3 or len(size) != 3 or len(velocity) != 2:
            raise SceneValidationError(f"object {self.id!r}: wrong vector length")
        for name, vec in (("center", center), ("size", size), ("velocity", velocity)):
            if not all(math.isfinite(v) for v in vec):
                raise SceneValidationError(f"object {self.id!r}: non-finite {name}")
        for axis, s in zip(("dx", "dy", "dz"), size):
            if s <= 0.0:
                raise SceneValidationError(f"object {self.id!r}: size {axis}={s} must be > 0")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "velocity", velocity)
        object.__setattr__(self, "yaw", wrap_yaw(self.yaw))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "class": self.cls.label,
            "center": list(self.center),
            "size": list(self.size),
            "yaw": self.yaw,
            "velocity": list(self.velocity),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectState":
        return cls(
            id=str(d["id"]),
            cls=ObjectClass.parse(d["class"]),
            center=tuple(d["center"]),
            size=tuple(d["size"]),
            yaw=float(d["yaw"]),
            velocity=tuple(d.get("velocity", (0.0, 0.0))),
        )


@dataclass(frozen=True)
class Frame:
    frame_id: str
    timestamp_us: int
    objects: tuple[ObjectState, ...] = ()

    def __post_init__(self):
        objects = tuple(self.objects)
        seen = set()
        for obj in objects:
            if obj.id in seen:
                raise SceneValidationError(
                    f"frame {self.frame_id!r}: duplicate object id {obj.id!r}"
                )
            seen.add(obj.id)
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "timestamp_us", int(self.timestamp_us))

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "timestamp_us": self.timestamp_us,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Frame":
        frame_id = str(d["frame_id"])
        objects = []
        for raw in d.get("objects", []):
            try:
                objects.append(ObjectState.from_dict(raw))
            except SceneValidationError as exc:
                raise SceneValidationError(f"frame {frame_id!r}: {exc}") from None
        return cls(frame_id=frame_id, timestamp_us=int(d["timestamp_us"]), objects=tuple(objects))


@dataclass(frozen=True)
class Scene:
    scene_id: str
    frames: tuple[Frame, ...] = ()

    def __post_init__(self):
        frames = tuple(self.frames)
        for prev, cur in zip(frames, frames[1:]):
            if cur.timestamp_us < prev.timestamp_us:
                raise SceneValidationError(
                    f"frame {cur.frame_id!r}: timestamp decreases ({cur.timestamp_us} < {prev.timestamp_us})"
                )
        object.__setattr__(self, "frames", frames)

    @property
    def n_objects(self) -> int:
        return sum(len(f.objects) for f in self.frames)


def load_scene(path: str | Path, scene_id: str | None = None) -> Scene:
    path = Path(path)
    frames = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SceneParseError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            try:
                frames.append(Frame.from_dict(raw))
            except SceneValidationError as exc:
                raise SceneValidationError(f"{path}:{lineno}: {exc}") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise SceneParseError(f"{path}:{lineno}: bad frame record ({exc!r})") from None
    return Scene(scene_id=scene_id or path.stem, frames=tuple(frames))


def dump_scene_lines(scene: Scene) -> list[str]:
    return [json.dumps(f.to_dict(), separators=(",", ":")) for f in scene.frames]


def save_scene(scene: Scene, path: str | Path) -> None:
    lines = dump_scene_lines(scene)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


@dataclass(frozen=True)
class SyntheticSpec:
    n_frames: int = 1
    objects_per_frame: int = 50
    class_mix: Sequence[float] = field(default_factory=lambda: (1.0,) * 10)
    area: float = 100.0
    seed: int = 0
    min_separation: float = 0.5
    frame_interval_us: int = 500_000


class PackingError(RuntimeError):
    pass


def _place_centers(rng: np.random.Generator, n: int, area: float, min_sep: float) -> np.ndarray:
    half = 0.5 * area
    cell = min_sep
    buckets: dict[tuple[int, int], list[int]] = {}
    out = np.empty((n, 2))
    for k in range(n):
        for _ in range(1000):
            p = rng.uniform(-half, half, size=2)
            key = (int(math.floor(p[0] / cell)), int(math.floor(p[1] / cell)))
            clash = False
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    for idx in buckets.get((key[0] + di, key[1] + dj), ()):
                        if math.hypot(*(out[idx] - p)) < min_sep:
                            clash = True
                            break
                    if clash:
                        break
                if clash:
                    break
            if not clash:
                out[k] = p
                buckets.setdefault(key, []).append(k)
                break
        else:
            raise PackingError(
                f"could not place object {k + 1}/{n} in a {area} m square after 1000 attempts"
            )
    return out


def generate_synthetic_scene(spec: SyntheticSpec, scene_id: str | None = None) -> Scene:
    """Draw independent frames of uniformly placed objects.

    Sizes come from ``CLASS_SIZE_RANGES``; moving classes get a speed along
    their heading up to ``CLASS_MAX_SPEED``.
    """
    if spec.objects_per_frame < 0 or spec.n_frames < 0:
        raise ValueError("n_frames and objects_per_frame must be >= 0")
    weights = np.asarray(spec.class_mix, dtype=np.float64)
    if weights.shape != (10,) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("class_mix needs 10 non-negative weights with positive sum")
    probs = weights / weights.sum()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(spec.seed), 0x5CE7E])))
    frames = []
    for f in range(spec.n_frames):
        n = spec.objects_per_frame
        classes = rng.choice(10, size=n, p=probs)
        centers = _place_centers(rng, n, spec.area, spec.min_separation)
        u = rng.uniform(size=(n, 3))
        yaws = rng.uniform(-math.pi, math.pi, size=n)
        speed_frac = rng.uniform(size=n)
        objects = []
        for k in range(n):
            c = ObjectClass(int(classes[k]))
            rng_l, rng_w, rng_h = CLASS_SIZE_RANGES[c]
            size = tuple(lo + (hi - lo) * u[k, a] for a, (lo, hi) in enumerate((rng_l, rng_w, rng_h)))
            speed = CLASS_MAX_SPEED[c] * speed_frac[k]
            yaw = float(yaws[k])
            objects.append(
                ObjectState(
                    id=f"obj{k:05d}",
                    cls=c,
                    center=(float(centers[k, 0]), float(centers[k, 1]), EGO_GROUND_Z + 0.5 * size[2]),
                    size=size,
                    yaw=yaw,
                    velocity=(speed * math.cos(yaw), speed * math.sin(yaw)),
                )
            )
        frames.append(
            Frame(frame_id=f"f{f:05d}", timestamp_us=f * spec.frame_interval_us, objects=tuple(objects))
        )
    return Scene(scene_id=scene_id or f"synthetic-{spec.seed}", frames=tuple(frames))


def objects_to_arrays(objects: Iterable[ObjectState]) -> dict[str, np.ndarray]:
    objs = list(objects)
    return {
        "cls": np.array([o.cls for o in objs], dtype=np.int64),
        "center": np.array([o.center for o in objs], dtype=np.float64).reshape(-1, 3),
        "size": np.array([o.size for o in objs], dtype=np.float64).reshape(-1, 3),
        "yaw": np.array([o.yaw for o in objs], dtype=np.float64),
        "velocity": np.array([o.velocity for o in objs], dtype=np.float64).reshape(-1, 2),
    }
