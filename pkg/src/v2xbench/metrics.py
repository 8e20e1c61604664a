"""Center-distance detection metrics in the nuScenes style.

Matching is greedy by descending score over planar center distance, AP is
the area under the 101-point interpolated PR curve restricted to
recall > 0.1 and precision > 0.1, and the true-positive errors are means
over the matches at a single distance threshold.  The composite score
NDS' drops the attribute term, so it is *not* comparable to published NDS.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .scene import CLASS_NAMES, ObjectClass, ObjectState


@dataclass(frozen=True)
class Detection:
    cls: ObjectClass
    center: tuple[float, float]
    size: tuple[float, float, float]
    yaw: float
    velocity: tuple[float, float]
    score: float
    id: str = ""
    z: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cls", ObjectClass.parse(self.cls))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")
        if any(s <= 0 for s in self.size):
            raise ValueError("detection size must be positive")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "class": self.cls.label,
            "center": list(self.center),
            "z": self.z,
            "size": list(self.size),
            "yaw": self.yaw,
            "velocity": list(self.velocity),
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(
            cls=ObjectClass.parse(d["class"]),
            center=tuple(float(v) for v in d["center"][:2]),
            size=tuple(float(v) for v in d["size"]),
            yaw=float(d["yaw"]),
            velocity=tuple(float(v) for v in d.get("velocity", (0.0, 0.0))),
            score=float(d["score"]),
            id=str(d.get("id", "")),
            z=float(d.get("z", 0.0)),
        )


@dataclass(frozen=True)
class MetricsConfig:
    dist_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    tp_threshold: float = 2.0
    min_recall: float = 0.1
    min_precision: float = 0.1
    ate_norm: float = 1.0
    ase_norm: float = 1.0
    aoe_norm: float = math.pi
    ave_norm: float = 10.0

    def to_dict(self) -> dict:
        return {
            "dist_thresholds": list(self.dist_thresholds),
            "tp_threshold": self.tp_threshold,
            "min_recall": self.min_recall,
            "min_precision": self.min_precision,
            "error_normalizers": {
                "ate": self.ate_norm,
                "ase": self.ase_norm,
                "aoe": self.aoe_norm,
                "ave": self.ave_norm,
            },
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "MetricsConfig":
        d = d or {}
        norms = d.get("error_normalizers", {})
        return cls(
            dist_thresholds=tuple(float(t) for t in d.get("dist_thresholds", (0.5, 1.0, 2.0, 4.0))),
            tp_threshold=float(d.get("tp_threshold", 2.0)),
            min_recall=float(d.get("min_recall", 0.1)),
            min_precision=float(d.get("min_precision", 0.1)),
            ate_norm=float(norms.get("ate", 1.0)),
            ase_norm=float(norms.get("ase", 1.0)),
            aoe_norm=float(norms.get("aoe", math.pi)),
            ave_norm=float(norms.get("ave", 10.0)),
        )


ERROR_NAMES = ("ate", "ase", "aoe", "ave")


def _planar_dist(pred: Detection, gt: ObjectState) -> float:
    return math.hypot(pred.center[0] - gt.center[0], pred.center[1] - gt.center[1])


def _sort_key(pred: Detection):
    return (-pred.score, pred.id)


def match_detections(
    preds: Sequence[Detection],
    gts: Sequence[ObjectState],
    cls: ObjectClass,
    threshold: float,
) -> list[tuple[Detection, ObjectState | None]]:
    """Greedy single-frame matching for one class, in descending score order."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    cls = ObjectClass(cls)
    cls_preds = sorted((p for p in preds if p.cls == cls), key=_sort_key)
    cls_gts = [g for g in gts if g.cls == cls]
    taken = [False] * len(cls_gts)
    out = []
    for p in cls_preds:
        best, best_d = -1, math.inf
        for k, g in enumerate(cls_gts):
            if taken[k]:
                continue
            d = _planar_dist(p, g)
            if d < best_d:
                best, best_d = k, d
        if best >= 0 and best_d <= threshold:
            taken[best] = True
            out.append((p, cls_gts[best]))
        else:
            out.append((p, None))
    return out


def compute_ap(
    tp_flags: Sequence[bool],
    n_gt: int,
    min_recall: float = 0.1,
    min_precision: float = 0.1,
) -> float | None:
    """AP from TP/FP flags listed in descending score order.

    Returns ``None`` when there is neither ground truth nor a prediction.
    """
    if n_gt < 0:
        raise ValueError("n_gt must be >= 0")
    flags = np.asarray(tp_flags, dtype=bool)
    if n_gt == 0:
        return None if flags.size == 0 else 0.0
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags).astype(np.float64)
    fp = np.cumsum(~flags).astype(np.float64)
    prec = tp / (tp + fp)
    rec = tp / float(n_gt)
    rec_interp = np.linspace(0.0, 1.0, 101)
    prec = np.interp(rec_interp, rec, prec, right=0.0)
    prec = prec[round(100 * min_recall) + 1 :]
    prec = prec - min_precision
    prec[prec < 0] = 0.0
    # (0.9 / 0.9) can land one ulp above 1
    return min(1.0, float(np.mean(prec)) / (1.0 - min_precision))


def _aligned_iou(a: Sequence[float], b: Sequence[float]) -> float:
    inter = float(np.prod(np.minimum(a, b)))
    union = float(np.prod(a)) + float(np.prod(b)) - inter
    return inter / union


def _yaw_diff(a: float, b: float) -> float:
    d = abs(math.remainder(a - b, 2.0 * math.pi))
    return min(d, math.pi)


def tp_errors(pairs: Sequence[tuple[Detection, ObjectState]]) -> tuple[float, float, float, float] | None:
    """Mean (ATE, ASE, AOE, AVE) over matched pairs; ``None`` without matches."""
    if not pairs:
        return None
    ate = ase = aoe = ave = 0.0
    for p, g in pairs:
        ate += _planar_dist(p, g)
        ase += 1.0 - _aligned_iou(p.size, g.size)
        aoe += _yaw_diff(p.yaw, g.yaw)
        ave += math.hypot(p.velocity[0] - g.velocity[0], p.velocity[1] - g.velocity[1])
    n = len(pairs)
    return ate / n, ase / n, aoe / n, ave / n


def normalize_errors(errors: tuple[float, float, float, float] | None, config: MetricsConfig) -> tuple[float, ...]:
    if errors is None:
        return (1.0, 1.0, 1.0, 1.0)
    norms = (config.ate_norm, config.ase_norm, config.aoe_norm, config.ave_norm)
    return tuple(min(1.0, e / n) for e, n in zip(errors, norms))


def compose_score(
    class_aps: Mapping[ObjectClass, float],
    class_errors: Mapping[ObjectClass, tuple[float, float, float, float] | None],
    config: MetricsConfig | None = None,
) -> float:
    """NDS' = (5 mAP + sum over 4 errors of (1 - min(1, normalized mean error))) / 9.

    ``class_aps`` holds each evaluated class's AP averaged over distance
    thresholds; classes without a match count with the worst error.
    """
    config = config or MetricsConfig()
    if not class_aps:
        raise ValueError("no class was evaluated")
    mean_ap = float(np.mean([class_aps[c] for c in sorted(class_aps)]))
    normed = np.array([normalize_errors(class_errors.get(c), config) for c in sorted(class_aps)])
    mean_err = normed.mean(axis=0)
    return float((5.0 * mean_ap + float(np.sum(1.0 - np.minimum(1.0, mean_err)))) / 9.0)


@dataclass
class MetricsReport:
    class_ap: dict[str, dict[float, float | None]]
    class_errors: dict[str, tuple[float, float, float, float] | None]
    mean_ap: float
    mean_errors: tuple[float, float, float, float]
    nds_prime: float
    n_gt: dict[str, int]
    n_pred: dict[str, int]
    config: MetricsConfig = field(default_factory=MetricsConfig)

    def ap_per_class(self) -> dict[str, float | None]:
        """AP averaged over thresholds; ``None`` for classes not evaluated."""
        out = {}
        for name in CLASS_NAMES:
            aps = self.class_ap.get(name, {})
            vals = [v for v in aps.values() if v is not None]
            out[name] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self) -> dict:
        return {
            "score_name": "NDS'",
            "note": "attribute-free composite; not comparable to the official NDS",
            "nds_prime": self.nds_prime,
            "mAP": self.mean_ap,
            "mean_normalized_errors": dict(zip(ERROR_NAMES, self.mean_errors)),
            "class_ap": {
                name: {f"{t:g}": v for t, v in aps.items()} for name, aps in self.class_ap.items()
            },
            "class_errors": {
                name: (dict(zip(ERROR_NAMES, e)) if e is not None else None)
                for name, e in self.class_errors.items()
            },
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "constants": self.config.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_header(self) -> list[str]:
        return ["nds_prime", "mAP", *(f"{e}_norm" for e in ERROR_NAMES), *(f"ap_{n}" for n in CLASS_NAMES)]

    def csv_row(self) -> list[str]:
        per_class = self.ap_per_class()
        vals = [self.nds_prime, self.mean_ap, *self.mean_errors]
        cells = [f"{v:.6f}" for v in vals]
        cells += ["" if per_class[n] is None else f"{per_class[n]:.6f}" for n in CLASS_NAMES]
        return cells

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.csv_header())
        w.writerow(self.csv_row())
        return buf.getvalue()


def _match_dataset(
    preds: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[ObjectState]],
    cls: ObjectClass,
    threshold: float,
) -> tuple[list[bool], list[tuple[Detection, ObjectState]]]:
    """Greedy matching over all frames with one global score ordering."""
    entries = []
    for fid in sorted(preds):
        for p in preds[fid]:
            if p.cls == cls:
                entries.append((-p.score, p.id, fid, p))
    entries.sort(key=lambda e: e[:3])
    gt_lists = {fid: [g for g in gts.get(fid, ()) if g.cls == cls] for fid in gts}
    taken = {fid: [False] * len(v) for fid, v in gt_lists.items()}
    flags: list[bool] = []
    pairs: list[tuple[Detection, ObjectState]] = []
    for _, _, fid, p in entries:
        cands = gt_lists.get(fid, [])
        best, best_d = -1, math.inf
        for k, g in enumerate(cands):
            if taken[fid][k]:
                continue
            d = _planar_dist(p, g)
            if d < best_d:
                best, best_d = k, d
        if best >= 0 and best_d <= threshold:
            taken[fid][best] = True
            flags.append(True)
            pairs.append((p, cands[best]))
        else:
            flags.append(False)
    return flags, pairs


def evaluate(
    preds: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[ObjectState]],
    config: MetricsConfig | None = None,
) -> MetricsReport:
    """Evaluate detections against ground truth, both keyed by frame id."""
    config = config or MetricsConfig()
    class_ap: dict[str, dict[float, float | None]] = {}
    class_err: dict[str, tuple | None] = {}
    n_gt: dict[str, int] = {}
    n_pred: dict[str, int] = {}
    aps_for_score: dict[ObjectClass, float] = {}
    errs_for_score: dict[ObjectClass, tuple | None] = {}
    for cls in ObjectClass:
        name = cls.label
        n_gt[name] = sum(1 for fid in gts for g in gts[fid] if g.cls == cls)
        n_pred[name] = sum(1 for fid in preds for p in preds[fid] if p.cls == cls)
        aps = {}
        for t in config.dist_thresholds:
            flags, _ = _match_dataset(preds, gts, cls, t)
            aps[t] = compute_ap(flags, n_gt[name], config.min_recall, config.min_precision)
        class_ap[name] = aps
        _, pairs = _match_dataset(preds, gts, cls, config.tp_threshold)
        errs = tp_errors(pairs)
        class_err[name] = errs
        if n_gt[name] > 0 or n_pred[name] > 0:
            aps_for_score[cls] = float(np.mean([aps[t] for t in config.dist_thresholds]))
            errs_for_score[cls] = errs
    if aps_for_score:
        nds = compose_score(aps_for_score, errs_for_score, config)
        mean_ap = float(np.mean([aps_for_score[c] for c in sorted(aps_for_score)]))
        normed = np.array([normalize_errors(errs_for_score[c], config) for c in sorted(aps_for_score)])
        mean_errors = tuple(float(v) for v in normed.mean(axis=0))
    else:
        nds, mean_ap, mean_errors = 0.0, 0.0, (1.0, 1.0, 1.0, 1.0)
    return MetricsReport(class_ap, class_err, mean_ap, mean_errors, nds, n_gt, n_pred, config)
