"""Toy-scale gated fusion of V2X BEV features into ego-sensor BEV features.

    gate  = sigmoid(conv([f_fused, f_v2x]; W, b))          one channel, same padding
    f_out = f_fused + P (alpha * (gate * f_v2x))           P = identity if absent

Forward and backward are plain numpy in float64.  Arrays are ``(C, H, W)``
or batched ``(N, C, H, W)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import expit

from .emulator import EmulationConfig, GaussianVariable, OFF, V2xFrame, V2xObject, emulate_frame
from .raster import ChannelLayout, GridSpec, NormalizationSpec, rasterize_arrays
from .rng import Channel, keyed_rng
from .scene import Frame, ObjectClass, ObjectState, SyntheticSpec, generate_synthetic_scene, nominal_size


class GradientCheckError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class GateParams:
    w: np.ndarray  # (1, C_f + C_v, k, k)
    b: float
    alpha: np.ndarray  # (C_v,)
    proj: np.ndarray | None = None  # (C_f, C_v)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.b = float(self.b)
        if self.proj is not None:
            self.proj = np.asarray(self.proj, dtype=np.float64)
        if self.w.ndim != 4 or self.w.shape[0] != 1 or self.w.shape[2] != self.w.shape[3]:
            raise ValueError(f"gate kernel must be (1, C, k, k), got {self.w.shape}")
        if self.w.shape[2] % 2 == 0:
            raise ValueError("gate kernel size must be odd")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.alpha)) and math.isfinite(self.b)):
            raise ValueError("gate parameters must be finite")

    @property
    def kernel_size(self) -> int:
        return self.w.shape[2]

    @property
    def n_fused(self) -> int:
        return self.proj.shape[0] if self.proj is not None else self.alpha.shape[0]

    @property
    def n_v2x(self) -> int:
        return self.alpha.shape[0]

    def copy(self) -> "GateParams":
        return GateParams(
            self.w.copy(), self.b, self.alpha.copy(), None if self.proj is None else self.proj.copy()
        )

    @classmethod
    def init(cls, n_fused: int, n_v2x: int, kernel_size: int = 3, seed: int = 0, scale: float = 0.01) -> "GateParams":
        rng = keyed_rng(seed, int(Channel.TOY_INIT))
        w = rng.normal(0.0, scale, size=(1, n_fused + n_v2x, kernel_size, kernel_size))
        proj = None
        if n_fused != n_v2x:
            proj = np.zeros((n_fused, n_v2x))
            m = min(n_fused, n_v2x)
            proj[np.arange(m), np.arange(m)] = 1.0
        return cls(w, 0.0, np.full(n_v2x, 0.1), proj)


@dataclass
class GateCache:
    f_fused: np.ndarray
    f_v2x: np.ndarray
    xpad: np.ndarray  # zero-padded concat([f_fused, f_v2x])
    gate: np.ndarray
    gated: np.ndarray  # alpha * gate * f_v2x
    batched: bool


@dataclass
class GateGrads:
    f_fused: np.ndarray | None
    f_v2x: np.ndarray | None
    w: np.ndarray
    b: float
    alpha: np.ndarray
    proj: np.ndarray | None


_GATE_LO = np.finfo(np.float64).tiny
_GATE_HI = np.nextafter(1.0, 0.0)


def _sigmoid(z):
    # expit keeps relative precision in the lower tail; the clip keeps the
    # gate inside the open interval once float64 saturates
    return np.clip(expit(z), _GATE_LO, _GATE_HI)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ValueError(f"expected (C, H, W) or (N, C, H, W), got shape {x.shape}")


def gate_forward_cached(f_fused, f_v2x, p: GateParams):
    ff, batched = _as_batch(f_fused)
    fv, batched_v = _as_batch(f_v2x)
    if batched != batched_v or ff.shape[0] != fv.shape[0] or ff.shape[2:] != fv.shape[2:]:
        raise ValueError(f"dimension mismatch: {np.shape(f_fused)} vs {np.shape(f_v2x)}")
    if fv.shape[1] != p.n_v2x or ff.shape[1] != p.n_fused or p.w.shape[1] != ff.shape[1] + fv.shape[1]:
        raise ValueError("channel counts do not match gate parameters")
    k = p.kernel_size
    r = k // 2
    x = np.concatenate([ff, fv], axis=1)
    xpad = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    h, w = ff.shape[2:]
    z = np.full((ff.shape[0], h, w), p.b)
    for i in range(k):
        for j in range(k):
            z += np.tensordot(p.w[0, :, i, j], xpad[:, :, i : i + h, j : j + w], axes=([0], [1]))
    gate = _sigmoid(z)
    gated = p.alpha[None, :, None, None] * gate[:, None] * fv
    if p.proj is None:
        f_out = ff + gated
    else:
        f_out = ff + np.einsum("fv,nvhw->nfhw", p.proj, gated)
    cache = GateCache(ff, fv, xpad, gate, gated, batched)
    if not batched:
        return f_out[0], gate[0], cache
    return f_out, gate, cache


def gate_forward(f_fused, f_v2x, p: GateParams) -> tuple[np.ndarray, np.ndarray]:
    f_out, gate, _ = gate_forward_cached(f_fused, f_v2x, p)
    return f_out, gate


def gate_backward(upstream, cache: GateCache | None, p: GateParams, input_grads: bool = True) -> GateGrads:
    """Gradients of a scalar loss given ``upstream = dloss/df_out``.

    With ``input_grads=False`` the gradients w.r.t. the two feature maps are
    skipped (returned as ``None``); training only needs the parameters.
    """
    if cache is None:
        raise ValueError("gate_backward needs the cache from gate_forward_cached")
    u, _ = _as_batch(upstream)
    ff, fv, gate = cache.f_fused, cache.f_v2x, cache.gate
    if p.proj is None:
        d_gated = u
        d_proj = None
    else:
        d_gated = np.einsum("fv,nfhw->nvhw", p.proj, u)
        d_proj = np.einsum("nfhw,nvhw->fv", u, cache.gated)
    d_alpha = np.einsum("nvhw,nhw,nvhw->v", d_gated, gate, fv)
    a = p.alpha[None, :, None, None]
    d_gate = np.einsum("nvhw,nvhw->nhw", d_gated * a, fv)
    dz = d_gate * gate * (1.0 - gate)
    d_b = float(dz.sum())
    k = p.kernel_size
    r = k // 2
    n, c_f = ff.shape[:2]
    h, w = ff.shape[2:]
    d_w = np.zeros_like(p.w)
    for i in range(k):
        for j in range(k):
            d_w[0, :, i, j] = np.tensordot(cache.xpad[:, :, i : i + h, j : j + w], dz, axes=([0, 2, 3], [0, 1, 2]))
    if not input_grads:
        return GateGrads(None, None, d_w, d_b, d_alpha, d_proj)
    d_xpad = np.zeros((n, p.w.shape[1], h + 2 * r, w + 2 * r))
    for i in range(k):
        for j in range(k):
            d_xpad[:, :, i : i + h, j : j + w] += p.w[0, :, i, j][None, :, None, None] * dz[:, None]
    d_x = d_xpad[:, :, r : r + h, r : r + w]
    d_ff = u + d_x[:, :c_f]
    d_fv = d_gated * a * gate[:, None] + d_x[:, c_f:]
    if not cache.batched:
        d_ff, d_fv = d_ff[0], d_fv[0]
    return GateGrads(d_ff, d_fv, d_w, d_b, d_alpha, d_proj)


# -- gradient checking -----------------------------------------------------

LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


# Loss values keep the dtype of ``f_out`` so the extended-precision reference
# below is not rounded back to double.


def sum_loss(f_out: np.ndarray) -> tuple[float, np.ndarray]:
    return np.sum(f_out)[()], np.ones_like(f_out)


def weighted_sum_loss(weights: np.ndarray) -> LossFn:
    def loss(f_out):
        return np.sum(weights * f_out)[()], np.array(weights, dtype=np.float64)

    return loss


def mse_loss(target: np.ndarray) -> LossFn:
    def loss(f_out):
        diff = f_out - target
        return np.mean(diff**2)[()], 2.0 * diff / diff.size

    return loss


def _reference_forward(ff, fv, w, b, alpha, proj):
    """Gate forward pass in whatever float type the inputs carry; written out
    tap by tap so it shares no code with :func:`gate_forward_cached`."""
    k = w.shape[2]
    r = k // 2
    c_f = ff.shape[0]
    h, wd = ff.shape[1:]
    x = np.concatenate([ff, fv], axis=0)
    xpad = np.zeros((x.shape[0], h + 2 * r, wd + 2 * r), dtype=x.dtype)
    xpad[:, r : r + h, r : r + wd] = x
    z = np.full((h, wd), b, dtype=x.dtype)
    for c in range(x.shape[0]):
        for i in range(k):
            for j in range(k):
                z = z + w[0, c, i, j] * xpad[c, i : i + h, j : j + wd]
    gate = 1 / (1 + np.exp(-z))
    gated = alpha[:, None, None] * gate[None] * fv
    if proj is None:
        return ff + gated
    out = ff.copy()
    for f in range(c_f):
        for v in range(fv.shape[0]):
            out[f] = out[f] + proj[f, v] * gated[v]
    return out


def gradient_check_report(
    params: GateParams,
    f_fused: np.ndarray,
    f_v2x: np.ndarray,
    loss: LossFn,
    step: float = 1e-5,
    grad_hook: Callable[[GateGrads], None] | None = None,
) -> dict[str, float]:
    """Max relative error per parameter group, analytic vs central differences.

    The analytic gradients are the float64 ones used in training.  The
    finite-difference reference is evaluated in extended precision so that
    its round-off stays well below the 1e-6 acceptance level even for
    gradient entries near 1e-5.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    ff64 = np.array(f_fused, dtype=np.float64)
    fv64 = np.array(f_v2x, dtype=np.float64)
    if ff64.ndim != 3 or fv64.ndim != 3:
        raise ValueError("gradient check expects unbatched (C, H, W) inputs")
    f_out, _, cache = gate_forward_cached(ff64, fv64, params)
    value, upstream = loss(f_out)
    if not math.isfinite(value):
        raise GradientCheckError("loss is not finite")
    grads = gate_backward(upstream, cache, params)
    if grad_hook is not None:
        grad_hook(grads)

    ld = np.longdouble
    slots = {
        "f_fused": ff64.astype(ld),
        "f_v2x": fv64.astype(ld),
        "w": params.w.astype(ld),
        "b": np.array([params.b], dtype=ld),
        "alpha": params.alpha.astype(ld),
    }
    if params.proj is not None:
        slots["proj"] = params.proj.astype(ld)

    def evaluate():
        out = _reference_forward(
            slots["f_fused"], slots["f_v2x"], slots["w"], slots["b"][0], slots["alpha"], slots.get("proj")
        )
        v = loss(out)[0]
        if not math.isfinite(v):
            raise GradientCheckError("loss is not finite")
        return v

    def rel(a: float, n: float) -> float:
        return abs(a - n) / max(abs(a), abs(n), 1e-8)

    report: dict[str, float] = {}
    for name, arr in slots.items():
        analytic = np.atleast_1d(np.asarray(getattr(grads, name), dtype=np.float64))
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            plus = evaluate()
            hi = arr[idx]
            arr[idx] = orig - step
            minus = evaluate()
            lo = arr[idx]
            arr[idx] = orig
            numeric = float((plus - minus) / (hi - lo))
            worst = max(worst, rel(float(analytic.reshape(arr.shape)[idx]), numeric))
        report[name] = worst
    return report


def finite_diff_check(
    params: GateParams,
    f_fused: np.ndarray,
    f_v2x: np.ndarray,
    loss: LossFn = sum_loss,
    step: float = 1e-5,
    grad_hook: Callable[[GateGrads], None] | None = None,
) -> float:
    return max(gradient_check_report(params, f_fused, f_v2x, loss, step, grad_hook).values())


# -- toy task --------------------------------------------------------------

TABLE_TRAIN_LEVELS = {
    # per-level (rot range rad, trans range m), identical for object and frame channels
    "low": ((0.0005, 0.005), (0.01, 1.0)),
    "medium": ((0.001, 0.01), (0.02, 2.0)),
    "high": ((0.002, 0.02), (0.03, 3.0)),
}


@dataclass(frozen=True)
class CameraModel:
    """Stand-in for camera BEV features: a blurred, attenuated occupancy map of
    the ground truth with missed objects, position jitter and clutter blobs."""

    blur_sigma_cells: float = 1.5
    gain: float = 0.6
    miss_rate: float = 0.3
    position_sigma: float = 0.5
    clutter_per_100m2: float = 0.3


@dataclass(frozen=True)
class ToyTaskSpec:
    grid_size: int = 32
    resolution: float = 0.4
    n_frames: int = 32
    objects_per_frame: int = 6
    class_mix: tuple[float, ...] = (1.0,) * 10
    obj_rot_range: tuple[float, float] = (0.0005, 0.005)
    obj_trans_range: tuple[float, float] = (0.01, 1.0)
    frame_rot_range: tuple[float, float] = (0.0005, 0.005)
    frame_trans_range: tuple[float, float] = (0.01, 1.0)
    dropout_rate: float = 0.0
    excluded_classes: tuple[str, ...] = ()
    camera: CameraModel = field(default_factory=CameraModel)
    kernel_size: int = 3
    epochs: int = 200
    learning_rate: float = 10.0
    seed: int = 7

    def __post_init__(self):
        if not 4 <= self.grid_size <= 64:
            raise ValueError("toy grid must be between 4x4 and 64x64")
        if self.kernel_size not in (1, 3):
            raise ValueError("kernel_size must be 1 or 3")
        if self.epochs < 1 or self.learning_rate <= 0 or self.n_frames < 1:
            raise ValueError("epochs, n_frames and learning_rate must be positive")

    @classmethod
    def for_level(cls, level: str, **kw) -> "ToyTaskSpec":
        rot, trans = TABLE_TRAIN_LEVELS[level]
        return cls(obj_rot_range=rot, obj_trans_range=trans, frame_rot_range=rot, frame_trans_range=trans, **kw)

    @classmethod
    def zero_noise(cls, **kw) -> "ToyTaskSpec":
        z = (0.0, 0.0)
        return cls(obj_rot_range=z, obj_trans_range=z, frame_rot_range=z, frame_trans_range=z, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_mix"] = list(self.class_mix)
        d["excluded_classes"] = list(self.excluded_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ToyTaskSpec":
        d = dict(d)
        if "level" in d:
            level = d.pop("level")
            rot, trans = TABLE_TRAIN_LEVELS[level]
            d.setdefault("obj_rot_range", rot)
            d.setdefault("obj_trans_range", trans)
            d.setdefault("frame_rot_range", rot)
            d.setdefault("frame_trans_range", trans)
        if "camera" in d and isinstance(d["camera"], dict):
            d["camera"] = CameraModel(**d["camera"])
        for key in ("obj_rot_range", "obj_trans_range", "frame_rot_range", "frame_trans_range", "class_mix"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        if "excluded_classes" in d:
            d["excluded_classes"] = tuple(str(c) for c in d["excluded_classes"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def emulation_config(self, seed: int) -> EmulationConfig:
        def dist(rng_):
            lo, hi = rng_
            return OFF if hi == 0 else GaussianVariable(lo, hi)

        return EmulationConfig(
            obj_rot=dist(self.obj_rot_range),
            obj_trans=dist(self.obj_trans_range),
            frame_rot=dist(self.frame_rot_range),
            frame_trans=dist(self.frame_trans_range),
            object_dropout_rate=self.dropout_rate,
            excluded_classes=frozenset(self.excluded_classes),
            seed=seed,
        )


def camera_features(
    frame: Frame,
    grid: GridSpec,
    layout: ChannelLayout,
    camera: CameraModel,
    seed: int,
    scene_id: str = "",
    frame_index: int = 0,
) -> np.ndarray:
    """Occupancy-like ``(K, H, W)`` features of a simulated camera branch."""
    rng = keyed_rng(seed, scene_id, frame_index, int(Channel.CAMERA))
    objs = list(frame.objects)
    n = len(objs)
    miss = rng.uniform(size=n) < camera.miss_rate
    jitter = rng.normal(0.0, camera.position_sigma, size=(n, 2))
    seen = []
    for k, o in enumerate(objs):
        if miss[k]:
            continue
        x, y, z = o.center
        st = ObjectState(o.id, o.cls, (x + jitter[k, 0], y + jitter[k, 1], z), o.size, o.yaw, o.velocity)
        seen.append(V2xObject(st, 0.0, 0.0, camera.gain))
    area = (grid.x_max - grid.x_min) * (grid.y_max - grid.y_min)
    n_clutter = int(rng.poisson(camera.clutter_per_100m2 * area / 100.0))
    cls_draw = rng.integers(0, layout.n_classes, size=n_clutter)
    pos = rng.uniform(size=(n_clutter, 2))
    yaw = rng.uniform(-math.pi, math.pi, size=n_clutter)
    strength = rng.uniform(0.5, 1.0, size=n_clutter)
    for k in range(n_clutter):
        cls = layout.classes[int(cls_draw[k])]
        x = grid.x_min + pos[k, 0] * (grid.x_max - grid.x_min)
        y = grid.y_min + pos[k, 1] * (grid.y_max - grid.y_min)
        st = ObjectState(f"clutter{k}", cls, (x, y, 0.0), nominal_size(cls), float(yaw[k]))
        seen.append(V2xObject(st, 0.0, 0.0, camera.gain * float(strength[k])))
    occ, _, _, _ = rasterize_arrays(V2xFrame(frame.frame_id, tuple(seen)), grid, layout, NormalizationSpec())
    occ = occ[: layout.n_classes]
    if camera.blur_sigma_cells > 0:
        occ = gaussian_filter(occ, sigma=(0, camera.blur_sigma_cells, camera.blur_sigma_cells), mode="constant")
    return occ


def v2x_features(
    v2x: V2xFrame, grid: GridSpec, layout: ChannelLayout, norm: NormalizationSpec | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Gate-branch V2X input ``(K + 2, H, W)``: class occupancies, the owner's
    confidence, and a constant bias plane.  Also returns the full BEV tensor."""
    norm = norm or NormalizationSpec()
    bev, owner, _, objs = rasterize_arrays(v2x, grid, layout, norm)
    conf = np.array([o.confidence for o in objs] + [0.0])
    conf_map = conf[owner]  # owner == -1 picks the trailing 0
    feats = np.concatenate(
        [bev[: layout.n_classes], conf_map[None], np.ones((1, grid.height, grid.width))], axis=0
    )
    return feats, bev


@dataclass
class ToyDataset:
    f_fused: np.ndarray
    f_v2x: np.ndarray
    target: np.ndarray
    # per transmitted object: (frame index, row, col, confidence)
    probes: np.ndarray


def toy_grid(task: ToyTaskSpec) -> GridSpec:
    half = 0.5 * task.grid_size * task.resolution
    return GridSpec(-half, half, -half, half, task.resolution)


def build_toy_dataset(task: ToyTaskSpec, layout: ChannelLayout | None = None) -> ToyDataset:
    layout = layout or ChannelLayout()
    grid = toy_grid(task)
    extent = grid.x_max - grid.x_min
    scene = generate_synthetic_scene(
        SyntheticSpec(
            n_frames=task.n_frames,
            objects_per_frame=task.objects_per_frame,
            class_mix=task.class_mix,
            area=extent,
            seed=task.seed,
        ),
        scene_id="toy",
    )
    emu = task.emulation_config(task.seed)
    ff, fv, tg, probes = [], [], [], []
    for f, frame in enumerate(scene.frames):
        v2x = emulate_frame(frame, emu, frame_index=f, scene_id=scene.scene_id)
        feats, _ = v2x_features(v2x, grid, layout)
        clean = V2xFrame(frame.frame_id, tuple(V2xObject(o, 0.0, 0.0, 1.0) for o in frame.objects))
        target, _, _, _ = rasterize_arrays(clean, grid, layout, NormalizationSpec())
        ff.append(camera_features(frame, grid, layout, task.camera, task.seed, scene.scene_id, f))
        fv.append(feats)
        tg.append(target[: layout.n_classes])
        for o in v2x.objects:
            i = int(math.floor((o.state.center[0] - grid.x_min) / grid.resolution))
            j = int(math.floor((o.state.center[1] - grid.y_min) / grid.resolution))
            if 0 <= i < grid.width and 0 <= j < grid.height:
                probes.append((f, j, i, o.confidence))
    return ToyDataset(
        np.stack(ff), np.stack(fv), np.stack(tg), np.array(probes, dtype=np.float64).reshape(-1, 4)
    )


def gate_by_confidence_decile(gate: np.ndarray, probes: np.ndarray) -> list[dict]:
    """Mean gate activation at each transmitted object's cell, by confidence decile
    (decile 0 holds the lowest confidences)."""
    if probes.shape[0] == 0:
        return [{"decile": d, "count": 0, "mean_gate": None, "conf_min": None, "conf_max": None} for d in range(10)]
    f = probes[:, 0].astype(int)
    j = probes[:, 1].astype(int)
    i = probes[:, 2].astype(int)
    conf = probes[:, 3]
    g = gate[f, j, i]
    order = np.argsort(conf, kind="stable")
    out = []
    for d, idx in enumerate(np.array_split(order, 10)):
        if idx.size == 0:
            out.append({"decile": d, "count": 0, "mean_gate": None, "conf_min": None, "conf_max": None})
            continue
        out.append(
            {
                "decile": d,
                "count": int(idx.size),
                "mean_gate": float(g[idx].mean()),
                "conf_min": float(conf[idx].min()),
                "conf_max": float(conf[idx].max()),
            }
        )
    return out


def train_toy(
    task: ToyTaskSpec, layout: ChannelLayout | None = None, init: GateParams | None = None
) -> tuple[GateParams, dict]:
    """Plain gradient descent on the MSE to the clean occupancy.  ``init``
    warm-starts from given parameters (copied, not modified)."""
    layout = layout or ChannelLayout()
    data = build_toy_dataset(task, layout)
    k = layout.n_classes
    params = init.copy() if init is not None else GateParams.init(k, k + 2, task.kernel_size, seed=task.seed)
    loss_fn = mse_loss(data.target)
    losses: list[float] = []
    initial = None
    over = 0
    for epoch in range(task.epochs):
        f_out, _, cache = gate_forward_cached(data.f_fused, data.f_v2x, params)
        value, upstream = loss_fn(f_out)
        if not math.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        losses.append(float(value))
        if initial is None:
            initial = value
        over = over + 1 if value > 10.0 * initial else 0
        if over >= 3:
            raise TrainingDivergedError(f"loss above 10x initial for 3 epochs (epoch {epoch})")
        g = gate_backward(upstream, cache, params, input_grads=False)
        lr = task.learning_rate
        params.w -= lr * g.w
        params.b -= lr * g.b
        params.alpha -= lr * g.alpha
        if params.proj is not None:
            params.proj -= lr * g.proj
    f_out, gate = gate_forward(data.f_fused, data.f_v2x, params)
    final = loss_fn(f_out)[0]
    report = {
        "losses": losses,
        "initial_loss": losses[0],
        "final_loss": final,
        "n_samples": int(data.probes.shape[0]),
        "gate_by_confidence_decile": gate_by_confidence_decile(gate, data.probes),
        "task_digest": task.digest(),
    }
    return params, report


# -- serialization ---------------------------------------------------------

_MAGIC = b"GATEPRM1"


def save_params(params: GateParams, path: str | Path, meta: dict | None = None) -> None:
    """Magic, u64 header length, JSON header, then little-endian f64 arrays."""
    arrays = [("w", params.w), ("b", np.array([params.b])), ("alpha", params.alpha)]
    if params.proj is not None:
        arrays.append(("proj", params.proj))
    header = {
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        **(meta or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path: str | Path) -> tuple[GateParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a gate parameter file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + n].decode("utf-8"))
    offset = 16 + n
    arrays = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(spec["shape"]).copy()
        offset += 8 * count
    params = GateParams(arrays["w"], float(arrays["b"][0]), arrays["alpha"], arrays.get("proj"))
    return params, header
