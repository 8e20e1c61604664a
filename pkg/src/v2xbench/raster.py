"""BEV rasterization of V2X object lists and peak decoding back to detections.

Tensor layout is ``(C, H, W)``: rows index y, columns index x.  Channels are
the class occupancies followed by sin(yaw), cos(yaw), z, vx, vy.

Occupancy candidates are ``confidence * g(u, v)`` with ``g`` the oriented
anisotropic Gaussian of the box.  Each class channel keeps the per-cell
maximum.  The object with the largest candidate over all classes owns the
cell; a property channel at an owned cell holds
``neutral + s * (p - neutral)`` where ``p`` is the owner's encoded property
and ``s`` its candidate.  Unowned cells hold ``neutral``.  Dividing
``s`` back out (it equals the max over class channels) recovers ``p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
from scipy import ndimage
import numpy as np

from .emulator import V2xFrame
from .metrics import Detection
from .scene import CLASS_NAMES, ObjectClass, nominal_size

TRUNCATION_Q = 9.0  # three semi-axes
TRUNCATION_BOUND = math.exp(-0.5 * TRUNCATION_Q)

N_PROPERTY_CHANNELS = 5
# two isolated footprints dip below ~0.61 of the weaker peak between them;
# lattice ripple along one thin ridge stays above ~0.75
RIDGE_SADDLE_RATIO = 0.7


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -51.2
    x_max: float = 51.2
    y_min: float = -51.2
    y_max: float = 51.2
    resolution: float = 0.4

    def __post_init__(self):
        if self.resolution <= 0 or self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("grid needs resolution > 0 and non-empty extents")
        for span in (self.x_max - self.x_min, self.y_max - self.y_min):
            cells = span / self.resolution
            if abs(cells - round(cells)) > 1e-6:
                raise ValueError(f"extent {span} m is not a multiple of resolution {self.resolution} m")

    @property
    def width(self) -> int:
        return int(round((self.x_max - self.x_min) / self.resolution))

    @property
    def height(self) -> int:
        return int(round((self.y_max - self.y_min) / self.resolution))

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.x_min + (i + 0.5) * self.resolution,
            self.y_min + (j + 0.5) * self.resolution,
        )

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "resolution": self.resolution,
        }


@dataclass(frozen=True)
class ChannelLayout:
    classes: tuple[ObjectClass, ...] = tuple(ObjectClass)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(ObjectClass.parse(c) for c in self.classes))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_channels(self) -> int:
        return self.n_classes + N_PROPERTY_CHANNELS

    @property
    def sin_channel(self) -> int:
        return self.n_classes

    @property
    def cos_channel(self) -> int:
        return self.n_classes + 1

    @property
    def z_channel(self) -> int:
        return self.n_classes + 2

    @property
    def vx_channel(self) -> int:
        return self.n_classes + 3

    @property
    def vy_channel(self) -> int:
        return self.n_classes + 4

    def channel_of(self, cls: "ObjectClass | str") -> int:
        return self.classes.index(ObjectClass.parse(cls))

    @property
    def channel_names(self) -> list[str]:
        return [f"occ_{c.label}" for c in self.classes] + ["sin_yaw", "cos_yaw", "z", "vx", "vy"]


@dataclass(frozen=True)
class NormalizationSpec:
    v_max: float = 20.0
    z_min: float = -10.0
    z_max: float = 10.0

    def __post_init__(self):
        if self.v_max <= 0 or self.z_min >= self.z_max:
            raise ValueError("normalization needs v_max > 0 and z_min < z_max")

    def encode_z(self, z):
        return np.clip((np.asarray(z, dtype=np.float64) - self.z_min) / (self.z_max - self.z_min), 0.0, 1.0)

    def decode_z(self, enc):
        return self.z_min + np.asarray(enc, dtype=np.float64) * (self.z_max - self.z_min)

    def encode_v(self, v):
        return (np.clip(np.asarray(v, dtype=np.float64), -self.v_max, self.v_max) + self.v_max) / (2.0 * self.v_max)

    def decode_v(self, enc):
        return np.asarray(enc, dtype=np.float64) * 2.0 * self.v_max - self.v_max

    def neutral(self) -> np.ndarray:
        """Encodings of sin=0, cos=0, z=0, vx=0, vy=0."""
        return np.array([0.5, 0.5, float(self.encode_z(0.0)), 0.5, 0.5])

    def to_dict(self) -> dict:
        return {"v_max": self.v_max, "z_min": self.z_min, "z_max": self.z_max}


@dataclass
class BevTensor:
    data: np.ndarray
    grid: GridSpec = field(default_factory=GridSpec)
    layout: ChannelLayout = field(default_factory=ChannelLayout)
    norm: NormalizationSpec = field(default_factory=NormalizationSpec)
    n_skipped: int = 0

    @property
    def occupancy(self) -> np.ndarray:
        return self.data[: self.layout.n_classes]

    @property
    def properties(self) -> np.ndarray:
        return self.data[self.layout.n_classes :]


def local_offset(delta: tuple[float, float], yaw: float) -> tuple[float, float]:
    dx, dy = delta
    c, s = math.cos(yaw), math.sin(yaw)
    return dx * c + dy * s, -dx * s + dy * c


def footprint(u, v, dx, dy):
    """Oriented Gaussian value exp(-0.5 [(u/(dx/2))^2 + (v/(dy/2))^2])."""
    if np.any(np.asarray(dx) <= 0) or np.any(np.asarray(dy) <= 0):
        raise ValueError("footprint needs positive box size")
    return np.exp(-0.5 * ((u / (0.5 * dx)) ** 2 + (v / (0.5 * dy)) ** 2))


# -- kernels ---------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _raster_kernel(cx, cy, yaw, hx, hy, conf, chan, props, neutral,
                   x_min, y_min, res, truncate, out, owner_idx):
    K = out.shape[0] - 5
    H = out.shape[1]
    W = out.shape[2]
    owner_val = np.zeros((H, W))
    skipped = 0
    for n in range(cx.shape[0]):
        c = math.cos(yaw[n])
        s = math.sin(yaw[n])
        ax = hx[n]
        ay = hy[n]
        k = chan[n]
        if truncate:
            ex = 3.0 * math.sqrt((ax * c) ** 2 + (ay * s) ** 2)
            ey = 3.0 * math.sqrt((ax * s) ** 2 + (ay * c) ** 2)
            i0 = max(0, int(math.floor((cx[n] - ex - x_min) / res - 0.5)) - 1)
            i1 = min(W - 1, int(math.ceil((cx[n] + ex - x_min) / res - 0.5)) + 1)
            j0 = max(0, int(math.floor((cy[n] - ey - y_min) / res - 0.5)) - 1)
            j1 = min(H - 1, int(math.ceil((cy[n] + ey - y_min) / res - 0.5)) + 1)
            if i0 > i1 or j0 > j1:
                skipped += 1
                continue
        else:
            i0, i1, j0, j1 = 0, W - 1, 0, H - 1
        for j in range(j0, j1 + 1):
            py = y_min + (j + 0.5) * res
            ddy = py - cy[n]
            for i in range(i0, i1 + 1):
                px = x_min + (i + 0.5) * res
                ddx = px - cx[n]
                u = ddx * c + ddy * s
                v = -ddx * s + ddy * c
                q = (u / ax) ** 2 + (v / ay) ** 2
                if truncate and q > 9.0:
                    continue
                cand = conf[n] * math.exp(-0.5 * q)
                if cand > out[k, j, i]:
                    out[k, j, i] = cand
                if cand > owner_val[j, i]:
                    owner_val[j, i] = cand
                    owner_idx[j, i] = n
    for j in range(H):
        for i in range(W):
            n = owner_idx[j, i]
            for p in range(5):
                if n >= 0:
                    out[K + p, j, i] = neutral[p] + owner_val[j, i] * (props[n, p] - neutral[p])
                else:
                    out[K + p, j, i] = neutral[p]
    return skipped


@numba.njit(cache=True, nogil=True)
def _bruteforce_kernel(cx, cy, yaw, dx, dy, conf, chan, props, neutral, x_min, y_min, res, out):
    K = out.shape[0] - 5
    H = out.shape[1]
    W = out.shape[2]
    best = np.zeros((H, W))
    who = np.full((H, W), -1, dtype=np.int64)
    for n in range(cx.shape[0]):
        for j in range(H):
            for i in range(W):
                ddx = x_min + (i + 0.5) * res - cx[n]
                ddy = y_min + (j + 0.5) * res - cy[n]
                u = ddx * math.cos(yaw[n]) + ddy * math.sin(yaw[n])
                v = -ddx * math.sin(yaw[n]) + ddy * math.cos(yaw[n])
                g = math.exp(-0.5 * ((u / (dx[n] / 2.0)) ** 2 + (v / (dy[n] / 2.0)) ** 2))
                cand = conf[n] * g
                if cand > out[chan[n], j, i]:
                    out[chan[n], j, i] = cand
                if cand > best[j, i]:
                    best[j, i] = cand
                    who[j, i] = n
    for j in range(H):
        for i in range(W):
            for p in range(5):
                if who[j, i] >= 0:
                    out[K + p, j, i] = neutral[p] + best[j, i] * (props[who[j, i], p] - neutral[p])
                else:
                    out[K + p, j, i] = neutral[p]


def _frame_arrays(frame: V2xFrame, layout: ChannelLayout, norm: NormalizationSpec):
    objs = [o for o in frame.objects if o.state.cls in layout.classes]
    n = len(objs)
    cx = np.empty(n)
    cy = np.empty(n)
    yaw = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    conf = np.empty(n)
    chan = np.empty(n, dtype=np.int64)
    props = np.empty((n, N_PROPERTY_CHANNELS))
    for k, o in enumerate(objs):
        st = o.state
        cx[k], cy[k] = st.center[0], st.center[1]
        yaw[k] = st.yaw
        dx[k], dy[k] = st.size[0], st.size[1]
        conf[k] = o.confidence
        chan[k] = layout.channel_of(st.cls)
        props[k, 0] = 0.5 * (math.sin(st.yaw) + 1.0)
        props[k, 1] = 0.5 * (math.cos(st.yaw) + 1.0)
        props[k, 2] = norm.encode_z(st.center[2])
        props[k, 3] = norm.encode_v(st.velocity[0])
        props[k, 4] = norm.encode_v(st.velocity[1])
    return objs, cx, cy, yaw, dx, dy, conf, chan, props


def rasterize_arrays(
    frame: V2xFrame,
    grid: GridSpec,
    layout: ChannelLayout,
    norm: NormalizationSpec,
    truncate: bool = True,
) -> tuple[np.ndarray, np.ndarray, int, list]:
    """Float64 tensor, per-cell owner index (into the returned object list, -1 if
    unowned), skipped-object count and the rasterized objects."""
    objs, cx, cy, yaw, dx, dy, conf, chan, props = _frame_arrays(frame, layout, norm)
    out = np.zeros((layout.n_channels, grid.height, grid.width))
    owner = np.full((grid.height, grid.width), -1, dtype=np.int64)
    skipped = _raster_kernel(
        cx, cy, yaw, 0.5 * dx, 0.5 * dy, conf, chan, props, norm.neutral(),
        float(grid.x_min), float(grid.y_min), float(grid.resolution), bool(truncate), out, owner,
    )
    return out, owner, int(skipped), objs


def rasterize_frame(
    frame: V2xFrame,
    grid: GridSpec | None = None,
    layout: ChannelLayout | None = None,
    norm: NormalizationSpec | None = None,
    truncate: bool = True,
) -> BevTensor:
    grid = grid or GridSpec()
    layout = layout or ChannelLayout()
    norm = norm or NormalizationSpec()
    out, _, skipped, _ = rasterize_arrays(frame, grid, layout, norm, truncate)
    return BevTensor(out.astype(np.float32), grid, layout, norm, skipped)


def rasterize_frame_bruteforce(
    frame: V2xFrame,
    grid: GridSpec | None = None,
    layout: ChannelLayout | None = None,
    norm: NormalizationSpec | None = None,
) -> BevTensor:
    """Reference rasterizer: every object against every cell, no truncation."""
    grid = grid or GridSpec()
    layout = layout or ChannelLayout()
    norm = norm or NormalizationSpec()
    _, cx, cy, yaw, dx, dy, conf, chan, props = _frame_arrays(frame, layout, norm)
    out = np.zeros((layout.n_channels, grid.height, grid.width))
    _bruteforce_kernel(
        cx, cy, yaw, dx, dy, conf, chan, props, norm.neutral(),
        float(grid.x_min), float(grid.y_min), float(grid.resolution), out,
    )
    return BevTensor(out.astype(np.float32), grid, layout, norm, 0)


# -- decoding --------------------------------------------------------------

_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]

_QX = np.array([-1, 0, 1, -1, 0, 1, -1, 0, 1], dtype=np.float64)
_QY = np.array([-1, -1, -1, 0, 0, 0, 1, 1, 1], dtype=np.float64)
_QUAD_PINV = np.linalg.pinv(
    np.stack([np.ones(9), _QX, _QY, _QX**2, _QX * _QY, _QY**2], axis=1)
)


def find_peaks(channel: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Local maxima over the 8-neighbourhood, as (row, col) in raster order.

    A plateau yields exactly one peak: a cell must be strictly greater than
    its neighbours that precede it in raster order and not smaller than the
    ones that follow.
    """
    H, W = channel.shape
    padded = np.full((H + 2, W + 2), -np.inf)
    padded[1:-1, 1:-1] = channel
    center = padded[1:-1, 1:-1]
    mask = center >= threshold
    for dj, di in _OFFSETS:
        nb = padded[1 + dj : 1 + dj + H, 1 + di : 1 + di + W]
        if dj < 0 or (dj == 0 and di < 0):
            mask &= center > nb
        else:
            mask &= center >= nb
    js, is_ = np.nonzero(mask)
    return list(zip(js.tolist(), is_.tolist()))


def merge_ridge_peaks(
    channel: np.ndarray,
    peaks: list[tuple[int, int]],
    max_radius: float,
    saddle_ratio: float = RIDGE_SADDLE_RATIO,
) -> list[tuple[int, int]]:
    """Drop lattice-induced secondary maxima along one footprint's ridge.

    Peaks are visited strongest first.  A weaker peak within ``max_radius``
    cells of a kept one is discarded when the channel never falls below
    ``saddle_ratio`` times the weaker value on the segment joining them.
    Returned in raster order.
    """
    if len(peaks) < 2:
        return peaks
    vals = np.array([channel[j, i] for j, i in peaks])
    order = np.argsort(-vals, kind="stable")
    kept: list[int] = []
    for idx in order:
        j, i = peaks[idx]
        floor = saddle_ratio * vals[idx]
        merged = False
        for k in kept:
            kj, ki = peaks[k]
            dist = math.hypot(kj - j, ki - i)
            if dist > max_radius:
                continue
            n = int(math.ceil(2.0 * dist)) + 1
            t = np.linspace(0.0, 1.0, n)
            coords = np.stack([j + t * (kj - j), i + t * (ki - i)])
            profile = ndimage.map_coordinates(channel, coords, order=1, mode="nearest")
            if profile.min() >= floor:
                merged = True
                break
        if not merged:
            kept.append(int(idx))
    return [peaks[k] for k in sorted(kept)]


def _axis_offset(l: float, c: float, r: float) -> float:
    if min(l, c, r) > 0:
        l, c, r = math.log(l), math.log(c), math.log(r)
    denom = l - 2.0 * c + r
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (l - r) / denom, -0.5, 0.5))


def refine_peak(channel: np.ndarray, j: int, i: int) -> tuple[float, float]:
    """Sub-cell (row, col) offset of a peak from a quadratic fit over its 3x3 patch.

    Fits log-values when the whole patch is positive (exact for a single
    Gaussian); otherwise falls back to independent 1-D fits per axis.
    """
    H, W = channel.shape
    if 0 < j < H - 1 and 0 < i < W - 1:
        patch = channel[j - 1 : j + 2, i - 1 : i + 2].astype(np.float64)
        if np.all(patch > 0):
            a = _QUAD_PINV @ np.log(patch).ravel()
            _, bx, by, dxx, dxy, dyy = a
            hess = np.array([[2 * dxx, dxy], [dxy, 2 * dyy]])
            det = np.linalg.det(hess)
            if hess[0, 0] < 0 and det > 0:
                ox, oy = np.linalg.solve(hess, [-bx, -by])
                if abs(ox) <= 1.0 and abs(oy) <= 1.0:
                    return float(oy), float(ox)
    def at(jj, ii):
        return float(channel[jj, ii]) if 0 <= jj < H and 0 <= ii < W else 0.0
    c = at(j, i)
    ox = _axis_offset(at(j, i - 1), c, at(j, i + 1))
    oy = _axis_offset(at(j - 1, i), c, at(j + 1, i))
    return oy, ox


def decode_maps(
    occupancy: np.ndarray,
    properties: np.ndarray | None,
    grid: GridSpec,
    layout: ChannelLayout,
    norm: NormalizationSpec,
    peak_threshold: float = 0.05,
    scale: np.ndarray | None = None,
) -> list[Detection]:
    """Peak-decode class occupancy maps; properties are read at each peak cell.

    ``scale`` is the per-cell owner strength used to undo property blending;
    it defaults to the max over the occupancy channels.
    """
    if not 0.0 < peak_threshold < 1.0:
        raise ValueError("peak_threshold must be in (0, 1)")
    if scale is None:
        scale = occupancy.max(axis=0) if occupancy.shape[0] else None
    neutral = norm.neutral()
    dets: list[Detection] = []
    for k, cls in enumerate(layout.classes):
        ch = occupancy[k]
        size = nominal_size(cls)
        radius = max(size[0], size[1]) / grid.resolution
        for j, i in merge_ridge_peaks(ch, find_peaks(ch, peak_threshold), radius):
            oy, ox = refine_peak(ch, j, i)
            x = grid.x_min + (i + 0.5 + ox) * grid.resolution
            y = grid.y_min + (j + 0.5 + oy) * grid.resolution
            enc = neutral.copy()
            yaw = 0.0
            if properties is not None:
                raw = properties[:, j, i].astype(np.float64)
                s = float(scale[j, i])
                if s > 0:
                    enc = np.clip(neutral + (raw - neutral) / s, 0.0, 1.0)
                yaw = math.atan2(2.0 * raw[0] - 1.0, 2.0 * raw[1] - 1.0)
            dets.append(
                Detection(
                    cls=cls,
                    center=(float(x), float(y)),
                    size=size,
                    yaw=yaw,
                    velocity=(float(norm.decode_v(enc[3])), float(norm.decode_v(enc[4]))),
                    score=float(min(1.0, max(0.0, ch[j, i]))),
                    id=f"{CLASS_NAMES[cls]}-{j:04d}-{i:04d}",
                    z=float(norm.decode_z(enc[2])),
                )
            )
    return dets


def decode_frame(tensor: BevTensor, peak_threshold: float = 0.05) -> list[Detection]:
    return decode_maps(
        tensor.occupancy,
        tensor.properties,
        tensor.grid,
        tensor.layout,
        tensor.norm,
        peak_threshold,
    )
