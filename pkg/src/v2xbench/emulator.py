"""V2X message emulation: object/frame noise, object dropout, class dropout,
and the sigma-derived confidence attached to every transmitted object."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Sequence, Union

import numpy as np

from .rng import Channel, keyed_rng
from .scene import Frame, ObjectClass, ObjectState, wrap_yaw, wrap_yaw_array

# confidence scales: 1 m of translation sigma or 0.15 rad of rotation sigma halve c
CONF_TRANS_SCALE = 1.0
CONF_ROT_SCALE = 0.15


@dataclass(frozen=True)
class Off:
    kind = "off"


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float
    kind = "uniform"

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.a > self.b:
            raise ValueError(f"uniform needs finite a <= b, got a={self.a}, b={self.b}")

    @property
    def std(self) -> float:
        return (self.b - self.a) / math.sqrt(12.0)


@dataclass(frozen=True)
class GaussianFixed:
    sigma: float
    kind = "gaussian"

    def __post_init__(self):
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"gaussian sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class GaussianVariable:
    sigma_min: float
    sigma_max: float
    kind = "gaussian_var"

    def __post_init__(self):
        if not (0 <= self.sigma_min <= self.sigma_max) or not math.isfinite(self.sigma_max):
            raise ValueError(
                f"gaussian_var needs 0 <= sigma_min <= sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )


NoiseDistribution = Union[Off, Uniform, GaussianFixed, GaussianVariable]

OFF = Off()


def distribution_from_dict(d: dict | None) -> NoiseDistribution:
    if d is None:
        return OFF
    kind = d.get("kind", "off")
    # YAML 1.1 reads a bare `off` as boolean false
    kind = "off" if kind is False or kind is None else str(kind).lower()
    if kind == "off":
        return OFF
    if kind == "uniform":
        return Uniform(float(d["a"]), float(d["b"]))
    if kind == "gaussian":
        return GaussianFixed(float(d["sigma"]))
    if kind == "gaussian_var":
        return GaussianVariable(float(d["sigma_min"]), float(d["sigma_max"]))
    raise ValueError(f"unknown noise kind {kind!r} (expected off|uniform|gaussian|gaussian_var)")


def distribution_to_dict(dist: NoiseDistribution) -> dict:
    if isinstance(dist, Uniform):
        return {"kind": "uniform", "a": dist.a, "b": dist.b}
    if isinstance(dist, GaussianFixed):
        return {"kind": "gaussian", "sigma": dist.sigma}
    if isinstance(dist, GaussianVariable):
        return {"kind": "gaussian_var", "sigma_min": dist.sigma_min, "sigma_max": dist.sigma_max}
    return {"kind": "off"}


@dataclass(frozen=True)
class EmulationConfig:
    obj_rot: NoiseDistribution = OFF
    obj_trans: NoiseDistribution = OFF
    frame_rot: NoiseDistribution = OFF
    frame_trans: NoiseDistribution = OFF
    object_dropout_rate: float = 0.0
    excluded_classes: frozenset = field(default_factory=frozenset)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.object_dropout_rate <= 1.0:
            raise ValueError(f"object_dropout_rate must be in [0, 1], got {self.object_dropout_rate}")
        object.__setattr__(
            self, "excluded_classes", frozenset(ObjectClass.parse(c) for c in self.excluded_classes)
        )

    @classmethod
    def from_dict(cls, d: dict, seed: int = 0) -> "EmulationConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown emulation keys: {sorted(unknown)}")
        return cls(
            obj_rot=distribution_from_dict(d.get("obj_rot")),
            obj_trans=distribution_from_dict(d.get("obj_trans")),
            frame_rot=distribution_from_dict(d.get("frame_rot")),
            frame_trans=distribution_from_dict(d.get("frame_trans")),
            object_dropout_rate=float(d.get("object_dropout_rate", 0.0)),
            excluded_classes=frozenset(d.get("excluded_classes", ())),
            seed=int(d.get("seed", seed)),
        )

    def to_dict(self) -> dict:
        return {
            "obj_rot": distribution_to_dict(self.obj_rot),
            "obj_trans": distribution_to_dict(self.obj_trans),
            "frame_rot": distribution_to_dict(self.frame_rot),
            "frame_trans": distribution_to_dict(self.frame_trans),
            "object_dropout_rate": self.object_dropout_rate,
            "excluded_classes": sorted(c.label for c in self.excluded_classes),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class V2xObject:
    state: ObjectState
    sigma_rot_eff: float
    sigma_trans_eff: float
    confidence: float

    def to_dict(self) -> dict:
        d = self.state.to_dict()
        d.update(
            sigma_rot_eff=self.sigma_rot_eff,
            sigma_trans_eff=self.sigma_trans_eff,
            confidence=self.confidence,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "V2xObject":
        return cls(
            state=ObjectState.from_dict(d),
            sigma_rot_eff=float(d.get("sigma_rot_eff", 0.0)),
            sigma_trans_eff=float(d.get("sigma_trans_eff", 0.0)),
            confidence=float(d.get("confidence", 1.0)),
        )


@dataclass(frozen=True)
class V2xFrame:
    frame_id: str
    objects: tuple[V2xObject, ...] = ()
    frame_sigma_rot: float = 0.0
    frame_sigma_trans: float = 0.0

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "frame_sigma_rot": self.frame_sigma_rot,
            "frame_sigma_trans": self.frame_sigma_trans,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "V2xFrame":
        return cls(
            frame_id=str(d["frame_id"]),
            objects=tuple(V2xObject.from_dict(o) for o in d.get("objects", [])),
            frame_sigma_rot=float(d.get("frame_sigma_rot", 0.0)),
            frame_sigma_trans=float(d.get("frame_sigma_trans", 0.0)),
        )


def clean_v2x_frame(frame: Frame) -> V2xFrame:
    """Wrap ground truth as a noise-free V2X frame (confidence 1)."""
    return V2xFrame(frame.frame_id, tuple(V2xObject(o, 0.0, 0.0, 1.0) for o in frame.objects))


# -- sampling --------------------------------------------------------------


def sample_perturbations(
    dist: NoiseDistribution, rng: np.random.Generator, n: int, dims: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` perturbations of ``dims`` components each.

    Returns ``(eps, sigma_used)`` with shapes ``(n, dims)`` and ``(n,)``.  For
    the variable-sigma Gaussian one sigma is drawn per row and shared by its
    components.
    """
    if isinstance(dist, Off):
        return np.zeros((n, dims)), np.zeros(n)
    if isinstance(dist, Uniform):
        eps = rng.uniform(dist.a, dist.b, size=(n, dims))
        return eps, np.full(n, dist.std)
    if isinstance(dist, GaussianFixed):
        eps = rng.standard_normal(size=(n, dims)) * dist.sigma
        return eps, np.full(n, float(dist.sigma))
    if isinstance(dist, GaussianVariable):
        sigma = rng.uniform(dist.sigma_min, dist.sigma_max, size=n)
        eps = rng.standard_normal(size=(n, dims)) * sigma[:, None]
        return eps, sigma
    raise TypeError(f"not a noise distribution: {dist!r}")


def sample_perturbation(dist: NoiseDistribution, rng: np.random.Generator) -> tuple[float, float]:
    eps, sigma = sample_perturbations(dist, rng, 1)
    return float(eps[0, 0]), float(sigma[0])


# -- elementary transforms -------------------------------------------------


def apply_object_noise(obj: ObjectState, eps_rot: float, eps_xy: tuple[float, float]) -> ObjectState:
    x, y, z = obj.center
    return replace(obj, yaw=wrap_yaw(obj.yaw + eps_rot), center=(x + eps_xy[0], y + eps_xy[1], z))


def apply_frame_noise(
    objs: Sequence[ObjectState], eps_rot: float, eps_xy: tuple[float, float]
) -> list[ObjectState]:
    """Rigid ego-pose error: rotate about the ego origin, then translate."""
    c, s = math.cos(eps_rot), math.sin(eps_rot)
    out = []
    for o in objs:
        x, y, z = o.center
        vx, vy = o.velocity
        out.append(
            replace(
                o,
                center=(c * x - s * y + eps_xy[0], s * x + c * y + eps_xy[1], z),
                yaw=wrap_yaw(o.yaw + eps_rot),
                velocity=(c * vx - s * vy, s * vx + c * vy),
            )
        )
    return out


def apply_dropout(objs: Sequence, p: float, rng: np.random.Generator) -> list:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    keep = rng.uniform(size=len(objs)) >= p
    return [o for o, k in zip(objs, keep) if k]


def apply_class_filter(objs: Iterable, excluded: Iterable) -> list:
    excluded = {ObjectClass.parse(c) for c in excluded}

    def cls_of(o):
        return o.state.cls if isinstance(o, V2xObject) else o.cls

    return [o for o in objs if cls_of(o) not in excluded]


def compute_confidence(sigma_rot, sigma_trans):
    """c = 1 / (1 + sigma_trans / 1 m + sigma_rot / 0.15 rad); accepts arrays."""
    sr = np.asarray(sigma_rot, dtype=np.float64)
    st = np.asarray(sigma_trans, dtype=np.float64)
    if np.any(sr < 0) or np.any(st < 0):
        raise ValueError("sigma must be non-negative")
    c = 1.0 / (1.0 + st / CONF_TRANS_SCALE + sr / CONF_ROT_SCALE)
    return float(c) if c.ndim == 0 else c


# -- full pipeline ---------------------------------------------------------


def emulate_frame(
    frame: Frame,
    config: EmulationConfig,
    frame_index: int = 0,
    scene_id: str = "",
) -> V2xFrame:
    """Class filter -> object dropout -> frame noise -> object noise -> confidence.

    All draws are keyed by ``(config.seed, scene_id, frame_index, channel)``;
    per-object draws are indexed by the object's position in ``frame.objects``
    so dropping one object never changes another object's noise.
    """
    objs = list(frame.objects)
    n = len(objs)

    def stream(ch: Channel) -> np.random.Generator:
        return keyed_rng(config.seed, scene_id, frame_index, int(ch))

    keep_idx = [i for i, o in enumerate(objs) if o.cls not in config.excluded_classes]
    if config.object_dropout_rate > 0.0 and keep_idx:
        u = stream(Channel.DROPOUT).uniform(size=n)
        keep_idx = [i for i in keep_idx if u[i] >= config.object_dropout_rate]

    f_rot, f_rot_sigma = sample_perturbations(config.frame_rot, stream(Channel.FRAME_ROT), 1, 1)
    f_xy, f_trans_sigma = sample_perturbations(config.frame_trans, stream(Channel.FRAME_TRANS), 1, 2)
    frame_sigma_rot = float(f_rot_sigma[0])
    frame_sigma_trans = float(f_trans_sigma[0])

    if not keep_idx:
        return V2xFrame(frame.frame_id, (), frame_sigma_rot, frame_sigma_trans)

    o_rot, o_rot_sigma = sample_perturbations(config.obj_rot, stream(Channel.OBJ_ROT), n, 1)
    o_xy, o_trans_sigma = sample_perturbations(config.obj_trans, stream(Channel.OBJ_TRANS), n, 2)

    idx = np.asarray(keep_idx)
    centers = np.array([objs[i].center for i in keep_idx], dtype=np.float64)
    yaws = np.array([objs[i].yaw for i in keep_idx], dtype=np.float64)
    vels = np.array([objs[i].velocity for i in keep_idx], dtype=np.float64)

    # frame-level rigid transform about the ego origin
    theta = float(f_rot[0, 0])
    c, s = math.cos(theta), math.sin(theta)
    x = c * centers[:, 0] - s * centers[:, 1] + f_xy[0, 0]
    y = s * centers[:, 0] + c * centers[:, 1] + f_xy[0, 1]
    vx = c * vels[:, 0] - s * vels[:, 1]
    vy = s * vels[:, 0] + c * vels[:, 1]
    yaws = yaws + theta

    # object-level perturbations
    x = x + o_xy[idx, 0]
    y = y + o_xy[idx, 1]
    yaws = wrap_yaw_array(yaws + o_rot[idx, 0])

    sigma_rot = np.sqrt(o_rot_sigma[idx] ** 2 + frame_sigma_rot**2)
    sigma_trans = np.sqrt(o_trans_sigma[idx] ** 2 + frame_sigma_trans**2)
    conf = compute_confidence(sigma_rot, sigma_trans)

    out = []
    for k, i in enumerate(keep_idx):
        src = objs[i]
        state = replace(
            src,
            center=(float(x[k]), float(y[k]), src.center[2]),
            yaw=float(yaws[k]),
            velocity=(float(vx[k]), float(vy[k])),
        )
        out.append(V2xObject(state, float(sigma_rot[k]), float(sigma_trans[k]), float(conf[k])))
    return V2xFrame(frame.frame_id, tuple(out), frame_sigma_rot, frame_sigma_trans)
