"""Experiment configuration, sweeps, detection pipelines, CSV/SVG output and
the A-E experiment suites."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import svgplot
from .emulator import OFF, EmulationConfig, GaussianFixed, emulate_frame
from .fusion import (
    CameraModel,
    GateParams,
    ToyTaskSpec,
    camera_features,
    gate_forward,
    train_toy,
    v2x_features,
)
from .metrics import Detection, MetricsConfig, MetricsReport, evaluate
from .raster import (
    ChannelLayout,
    GridSpec,
    NormalizationSpec,
    decode_frame,
    decode_maps,
    rasterize_arrays,
    rasterize_frame,
)
from .rng import derive_seed
from .scene import CLASS_NAMES, ObjectClass, Scene, SyntheticSpec, generate_synthetic_scene, load_scene


class ConfigError(ValueError):
    pass


ROT_SWEEP = (0.0, 0.05, 0.1, 0.15, 0.2, 0.3)
TRANS_SWEEP = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
PENETRATION_RATES = (0.25, 0.5, 0.75, 1.0)
TRAIN_DROPOUTS = (0.0, 0.25, 0.5, 0.75)
TRANSMITTING_CLASSES = ("car", "truck", "bus", "trailer", "motorcycle", "bicycle")
NON_TRANSMITTING_CLASSES = ("pedestrian", "cone", "barrier")

# test-time combined levels: (rotation rad, translation m) on object and frame channels
COMBINED_LEVELS: dict[str, tuple[float, float]] = {
    "low": (0.05, 0.25),
    "medium-low": (0.10, 0.50),
    "medium-high": (0.15, 0.75),
    "high": (0.30, 1.50),
}

SINGLE_CHANNELS = ("obj_rot", "obj_trans", "frame_rot", "frame_trans")
PIPELINES = ("direct-decode", "toy-fusion", "camera-only")


# -- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    kind: str = "single"  # single | combined | penetration
    values: tuple = TRANS_SWEEP
    channel: str = "obj_trans"  # single-parameter sweeps only
    base: EmulationConfig = field(default_factory=EmulationConfig)
    pipeline: str = "direct-decode"
    repetitions: int = 1
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("single", "combined", "penetration"):
            raise ConfigError(f"sweep.kind must be single|combined|penetration, got {self.kind!r}")
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if not self.values:
            raise ConfigError("sweep.values must not be empty")
        if self.repetitions < 1:
            raise ConfigError("sweep.repetitions must be >= 1")
        if self.kind == "single" and self.channel not in SINGLE_CHANNELS:
            raise ConfigError(f"sweep.channel must be one of {SINGLE_CHANNELS}")
        if self.kind == "combined":
            for v in self.values:
                if str(v) not in COMBINED_LEVELS:
                    raise ConfigError(f"unknown combined level {v!r}; use {list(COMBINED_LEVELS)}")
        else:
            for v in self.values:
                if not isinstance(v, (int, float)) or v < 0 or not math.isfinite(v):
                    raise ConfigError(f"sweep values must be non-negative numbers, got {v!r}")
            if self.kind == "penetration" and any(v > 1 for v in self.values):
                raise ConfigError("penetration rates must be in [0, 1]")

    @property
    def axis(self) -> str:
        if self.kind == "single":
            return self.channel
        return self.kind


@dataclass(frozen=True)
class HarnessConfig:
    seed: int = 0
    emulation: EmulationConfig = field(default_factory=EmulationConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)
    truncate: bool = True
    peak_threshold: float = 0.05
    fusion_peak_threshold: float = 0.05
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    pipeline: str = "direct-decode"
    sweep: SweepSpec | None = None
    toy: ToyTaskSpec = field(default_factory=lambda: ToyTaskSpec.for_level("low"))
    camera: CameraModel = field(default_factory=CameraModel)
    scene: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(n_frames=4, objects_per_frame=50))
    scene_path: str | None = None

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "emulation": self.emulation.to_dict(),
            "grid": self.grid.to_dict(),
            "normalization": self.normalization.to_dict(),
            "raster": {"truncate": self.truncate},
            "decode": {"peak_threshold": self.peak_threshold, "fusion_peak_threshold": self.fusion_peak_threshold},
            "metrics": self.metrics.to_dict(),
            "pipeline": self.pipeline,
            "toy": self.toy.to_dict(),
            "camera": dataclasses.asdict(self.camera),
            "scene": {
                "path": self.scene_path,
                **{k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self.scene).items()},
            },
        }
        if self.sweep is not None:
            s = self.sweep
            d["sweep"] = {
                "kind": s.kind,
                "values": list(s.values),
                "channel": s.channel,
                "repetitions": s.repetitions,
                "label": s.label,
            }
        return d

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _section(d: dict, key: str) -> dict:
    v = d.get(key) or {}
    if not isinstance(v, dict):
        raise ConfigError(f"{key!r} must be a mapping")
    return v


def config_from_dict(raw: dict) -> HarnessConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    known = {"seed", "emulation", "grid", "normalization", "raster", "decode", "metrics",
             "pipeline", "sweep", "toy", "camera", "scene"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        seed = int(raw.get("seed", 0))
        emulation = EmulationConfig.from_dict(_section(raw, "emulation"), seed=seed)
        grid = GridSpec(**_section(raw, "grid"))
        norm = NormalizationSpec(**_section(raw, "normalization"))
        raster = _section(raw, "raster")
        decode = _section(raw, "decode")
        metrics = MetricsConfig.from_dict(_section(raw, "metrics"))
        pipeline = str(raw.get("pipeline", "direct-decode"))
        toy_raw = _section(raw, "toy")
        camera = CameraModel(**_section(raw, "camera"))
        toy = ToyTaskSpec.from_dict({"level": "low", "camera": camera, **toy_raw})
        scene_raw = dict(_section(raw, "scene"))
        scene_path = scene_raw.pop("path", None)
        if "class_mix" in scene_raw:
            scene_raw["class_mix"] = tuple(float(v) for v in scene_raw["class_mix"])
        scene_raw.setdefault("n_frames", 4)
        scene_raw.setdefault("objects_per_frame", 50)
        scene_raw.setdefault("seed", seed)
        scene = SyntheticSpec(**scene_raw)
        sweep = None
        if raw.get("sweep"):
            s = _section(raw, "sweep")
            values = s.get("values")
            kind = str(s.get("kind", "single"))
            if values is None:
                values = {
                    "single": TRANS_SWEEP if "trans" in str(s.get("channel", "obj_trans")) else ROT_SWEEP,
                    "combined": tuple(COMBINED_LEVELS),
                    "penetration": PENETRATION_RATES,
                }[kind]
            sweep = SweepSpec(
                kind=kind,
                values=tuple(values),
                channel=str(s.get("channel", "obj_trans")),
                base=emulation,
                pipeline=pipeline,
                repetitions=int(s.get("repetitions", 1)),
                seed=seed,
                label=str(s.get("label", "")),
            )
        if pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {pipeline!r}")
        return HarnessConfig(
            seed=seed,
            emulation=emulation,
            grid=grid,
            normalization=norm,
            truncate=bool(raster.get("truncate", True)),
            peak_threshold=float(decode.get("peak_threshold", 0.05)),
            fusion_peak_threshold=float(decode.get("fusion_peak_threshold", 0.05)),
            metrics=metrics,
            pipeline=pipeline,
            sweep=sweep,
            toy=toy,
            camera=camera,
            scene=scene,
            scene_path=scene_path,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | Path | None) -> HarnessConfig:
    if path is None:
        return config_from_dict({})
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


def scene_for(cfg: HarnessConfig) -> Scene:
    if cfg.scene_path:
        return load_scene(cfg.scene_path)
    return generate_synthetic_scene(cfg.scene)


def git_describe() -> str:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


# -- pipelines -------------------------------------------------------------


@dataclass
class PipelineContext:
    cfg: HarnessConfig
    layout: ChannelLayout = field(default_factory=ChannelLayout)
    gate: GateParams | None = None


def _detect_frame(ctx: PipelineContext, scene: Scene, index: int, emu: EmulationConfig, pipeline: str) -> list[Detection]:
    cfg = ctx.cfg
    frame = scene.frames[index]
    if pipeline == "camera-only":
        cam = camera_features(frame, cfg.grid, ctx.layout, cfg.camera, emu.seed, scene.scene_id, index)
        return decode_maps(cam, None, cfg.grid, ctx.layout, cfg.normalization, cfg.fusion_peak_threshold)
    v2x = emulate_frame(frame, emu, frame_index=index, scene_id=scene.scene_id)
    if pipeline == "direct-decode":
        bev = rasterize_frame(v2x, cfg.grid, ctx.layout, cfg.normalization, cfg.truncate)
        return decode_frame(bev, cfg.peak_threshold)
    if ctx.gate is None:
        raise RuntimeError("toy-fusion pipeline needs trained gate parameters")
    feats, bev = v2x_features(v2x, cfg.grid, ctx.layout, cfg.normalization)
    cam = camera_features(frame, cfg.grid, ctx.layout, cfg.camera, emu.seed, scene.scene_id, index)
    f_out, _ = gate_forward(cam, feats, ctx.gate)
    k = ctx.layout.n_classes
    occ = np.clip(f_out, 0.0, 1.0)
    return decode_maps(
        occ, bev[k:], cfg.grid, ctx.layout, cfg.normalization, cfg.fusion_peak_threshold, scale=bev[:k].max(axis=0)
    )


def evaluate_scene(ctx: PipelineContext, scene: Scene, emu: EmulationConfig, pipeline: str) -> MetricsReport:
    preds = {}
    gts = {}
    for idx, frame in enumerate(scene.frames):
        preds[frame.frame_id] = _detect_frame(ctx, scene, idx, emu, pipeline)
        gts[frame.frame_id] = frame.objects
    return evaluate(preds, gts, ctx.cfg.metrics)


# -- sweeps ----------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    index: int
    label: str
    value: float
    rot_sigma: float | None = None
    trans_sigma: float | None = None
    penetration: float | None = None


@dataclass
class SweepRow:
    point: SweepPoint
    rep: int
    seed: int
    report: MetricsReport
    wall_time: float


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow]
    config_hash: str
    seed: int
    git: str = "unknown"
    label: str = ""

    def points(self) -> list[SweepPoint]:
        seen = {}
        for r in self.rows:
            seen.setdefault(r.point.index, r.point)
        return [seen[k] for k in sorted(seen)]

    def mean_nds(self) -> list[tuple[SweepPoint, float, float]]:
        """(point, mean NDS', std NDS') per point over repetitions."""
        out = []
        for p in self.points():
            vals = np.array([r.report.nds_prime for r in self.rows if r.point.index == p.index])
            out.append((p, float(vals.mean()), float(vals.std())))
        return out


def build_points(spec: SweepSpec) -> list[tuple[SweepPoint, EmulationConfig]]:
    base = spec.base
    pts = []
    for k, v in enumerate(spec.values):
        if spec.kind == "single":
            noise = {c: OFF for c in SINGLE_CHANNELS}
            noise[spec.channel] = GaussianFixed(float(v)) if v > 0 else OFF
            cfg = dataclasses.replace(base, **noise)
            is_rot = spec.channel.endswith("rot")
            pt = SweepPoint(k, f"{spec.channel}={float(v):g}", float(v),
                            rot_sigma=float(v) if is_rot else None,
                            trans_sigma=None if is_rot else float(v))
        elif spec.kind == "combined":
            rot, trans = COMBINED_LEVELS[str(v)]
            cfg = dataclasses.replace(
                base,
                obj_rot=GaussianFixed(rot),
                obj_trans=GaussianFixed(trans),
                frame_rot=GaussianFixed(rot),
                frame_trans=GaussianFixed(trans),
            )
            pt = SweepPoint(k, str(v), float(k + 1), rot_sigma=rot, trans_sigma=trans)
        else:
            rate = float(v)
            cfg = dataclasses.replace(base, object_dropout_rate=1.0 - rate)
            pt = SweepPoint(k, f"penetration={rate:g}", rate, penetration=rate)
        pts.append((pt, cfg))
    return pts


def run_sweep(
    scene: Scene,
    spec: SweepSpec,
    cfg: HarnessConfig | None = None,
    gate: GateParams | None = None,
    threads: int = 1,
) -> SweepResult:
    """Evaluate every (point, repetition) against the clean ground truth."""
    cfg = cfg or HarnessConfig()
    if not scene.frames:
        raise ValueError("scene has no frames")
    if spec.pipeline == "toy-fusion" and gate is None:
        gate = _train(cfg)
    ctx = PipelineContext(cfg, gate=gate)
    jobs = []
    for pt, emu in build_points(spec):
        for rep in range(spec.repetitions):
            seed = derive_seed(spec.seed, "rep", rep)
            jobs.append((pt, rep, seed, dataclasses.replace(emu, seed=seed)))

    def run(job):
        pt, rep, seed, emu = job
        t0 = time.perf_counter()
        try:
            report = evaluate_scene(ctx, scene, emu, spec.pipeline)
        except Exception as exc:
            raise RuntimeError(f"sweep point {pt.label!r} (rep {rep}) failed: {exc}") from exc
        return SweepRow(pt, rep, seed, report, time.perf_counter() - t0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    rows.sort(key=lambda r: (r.point.index, r.rep))
    h = config_hash({"config": cfg.to_dict(), "sweep": _sweep_dict(spec)})
    return SweepResult(spec, rows, h, spec.seed, git_describe(), spec.label or spec.pipeline)


def _sweep_dict(spec: SweepSpec) -> dict:
    return {
        "kind": spec.kind,
        "values": [str(v) if spec.kind == "combined" else float(v) for v in spec.values],
        "channel": spec.channel,
        "base": spec.base.to_dict(),
        "pipeline": spec.pipeline,
        "repetitions": spec.repetitions,
        "seed": spec.seed,
        "label": spec.label,
    }


CSV_COLUMNS = (
    ["series", "kind", "axis", "point", "label", "value", "rot_sigma", "trans_sigma", "penetration",
     "rep", "seed", "pipeline", "nds_prime", "mAP", "ate_norm", "ase_norm", "aoe_norm", "ave_norm"]
    + [f"ap_{n}" for n in CLASS_NAMES]
    + ["config_hash"]
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def result_rows(result: SweepResult) -> list[list[str]]:
    rows = []
    for r in result.rows:
        rep = r.report
        per_class = rep.ap_per_class()
        p = r.point
        rows.append(
            [
                result.label, result.spec.kind, result.spec.axis, str(p.index), p.label, _fmt(p.value),
                _fmt(p.rot_sigma), _fmt(p.trans_sigma), _fmt(p.penetration), str(r.rep), str(r.seed),
                result.spec.pipeline, _fmt(rep.nds_prime), _fmt(rep.mean_ap),
                *(_fmt(e) for e in rep.mean_errors),
                *(_fmt(per_class[n]) for n in CLASS_NAMES),
                result.config_hash,
            ]
        )
    return rows


def csv_text(results: SweepResult | Sequence[SweepResult]) -> str:
    if isinstance(results, SweepResult):
        results = [results]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for res in results:
        w.writerows(result_rows(res))
    return buf.getvalue()


def emit_csv(results: SweepResult | Sequence[SweepResult], path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(csv_text(results).encode("utf-8"))
    return path


def emit_summary_csv(results: Sequence[SweepResult], path: str | Path) -> Path:
    """Mean and standard deviation of NDS' per point over repetitions."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["series", "axis", "point", "label", "value", "n_reps", "nds_prime_mean", "nds_prime_std", "config_hash"])
    for res in results:
        for p, mean, std in res.mean_nds():
            w.writerow([res.label, res.spec.axis, p.index, p.label, _fmt(p.value), res.spec.repetitions,
                        _fmt(mean), _fmt(std), res.config_hash])
    path = Path(path)
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


AXIS_LABELS = {
    "obj_rot": "Object rotation std (rad)",
    "obj_trans": "Object translation std (m)",
    "frame_rot": "Frame rotation std (rad)",
    "frame_trans": "Frame translation std (m)",
    "combined": "Combined noise level",
    "penetration": "V2X penetration rate",
}


def emit_svg_plot(
    results: SweepResult | Sequence[SweepResult],
    path: str | Path,
    style: svgplot.PlotStyle | None = None,
) -> Path:
    if isinstance(results, SweepResult):
        results = [results]
    series = []
    for res in results:
        stats = res.mean_nds()
        series.append(
            svgplot.Series(
                label=res.label or res.spec.pipeline,
                x=[p.value for p, _, _ in stats],
                y=[m for _, m, _ in stats],
                axis=res.spec.axis,
            )
        )
    if style is None:
        axis = results[0].spec.axis
        ticks = [p.label for p in results[0].points()] if axis == "combined" else None
        style = svgplot.PlotStyle(title=f"NDS' vs {axis}", x_label=AXIS_LABELS.get(axis, axis), x_tick_labels=ticks)
    path = Path(path)
    svgplot.write_svg(path, series, style)
    return path


# -- experiment suites -----------------------------------------------------

SUITES = ("A", "B", "C", "D", "E")


def _write_meta(out_dir: Path, cfg: HarnessConfig, name: str, extra: dict | None = None) -> None:
    meta = {
        "suite": name,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "git": git_describe(),
        "score": "NDS' (attribute-free; not comparable to official NDS)",
        **(extra or {}),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _camera_baseline(scene: Scene, cfg: HarnessConfig, reps: int, threads: int) -> float:
    spec = SweepSpec(kind="penetration", values=(1.0,), pipeline="camera-only", repetitions=reps, seed=cfg.seed)
    res = run_sweep(scene, spec, cfg, threads=threads)
    return res.mean_nds()[0][1]


def _train(cfg: HarnessConfig, **changes) -> GateParams:
    # the camera stand-in must match the one used at evaluation time
    gate, _ = train_toy(dataclasses.replace(cfg.toy, camera=cfg.camera, **changes))
    return gate


def run_experiment_suite(
    name: str,
    scene: Scene,
    cfg: HarnessConfig,
    out_dir: str | Path,
    threads: int = 1,
    repetitions: int = 1,
) -> Path:
    """Run one desk-scale experiment analogue and write CSV + SVG into ``out_dir``."""
    name = name.upper()
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {SUITES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = dataclasses.replace(cfg.emulation, seed=cfg.seed)
    reps = repetitions
    baseline = _camera_baseline(scene, cfg, reps, threads)

    def sweep(kind, values, pipeline, label, channel="obj_trans", emu=base, gate=None):
        spec = SweepSpec(kind=kind, values=tuple(values), channel=channel, base=emu, pipeline=pipeline,
                         repetitions=reps, seed=cfg.seed, label=label)
        return run_sweep(scene, spec, cfg, gate=gate, threads=threads)

    def plot(results, fname, axis):
        ticks = [p.label for p in results[0].points()] if axis == "combined" else None
        style = svgplot.PlotStyle(
            title=f"Suite {name}: NDS' vs {axis}", x_label=AXIS_LABELS.get(axis, axis),
            baseline=baseline, baseline_label="camera-only", x_tick_labels=ticks,
        )
        emit_svg_plot(results, out / fname, style)

    all_results: list[SweepResult] = []
    if name in ("A", "B", "C"):
        if name == "A":
            variants = [("direct-decode", "direct-decode", None)]
        elif name == "B":
            variants = [("toy-fusion low", "toy-fusion", _train(cfg, **_level_ranges("low")))]
        else:
            variants = [
                (f"toy-fusion {lvl}", "toy-fusion", _train(cfg, **_level_ranges(lvl)))
                for lvl in ("low", "medium", "high")
            ]
        axes = [("obj_rot", ROT_SWEEP), ("obj_trans", TRANS_SWEEP), ("frame_rot", ROT_SWEEP),
                ("frame_trans", TRANS_SWEEP)]
        for channel, values in axes:
            res = [sweep("single", values, pipe, label, channel=channel, gate=g) for label, pipe, g in variants]
            emit_csv(res, out / f"sweep_{channel}.csv")
            plot(res, f"sweep_{channel}.svg", channel)
            all_results += res
        res = [sweep("combined", COMBINED_LEVELS, pipe, label, gate=g) for label, pipe, g in variants]
        emit_csv(res, out / "sweep_combined.csv")
        plot(res, "sweep_combined.svg", "combined")
        all_results += res
    elif name == "D":
        restricted = dataclasses.replace(base, excluded_classes=frozenset(NON_TRANSMITTING_CLASSES))
        res = [
            sweep("combined", ["medium-high"], "direct-decode", "full V2X"),
            sweep("combined", ["medium-high"], "direct-decode", "transmitting classes only", emu=restricted),
        ]
        emit_csv(res, out / "class_ap.csv")
        all_results += res
        _emit_class_bars(res, out / "class_ap.svg")
    else:
        restricted = dataclasses.replace(base, excluded_classes=frozenset(NON_TRANSMITTING_CLASSES))
        res = []
        for drop in TRAIN_DROPOUTS:
            gate = _train(cfg, dropout_rate=drop, excluded_classes=NON_TRANSMITTING_CLASSES, **_level_ranges("medium"))
            res.append(sweep("penetration", PENETRATION_RATES, "toy-fusion",
                             f"train dropout {int(round(drop * 100))}%", emu=restricted, gate=gate))
        emit_csv(res, out / "penetration.csv")
        plot(res, "penetration.svg", "penetration")
        all_results += res
    emit_summary_csv(all_results, out / "summary.csv")
    _write_meta(out, cfg, name, {"camera_only_nds_prime": round(baseline, 6), "repetitions": reps})
    return out


def _level_ranges(level: str) -> dict:
    spec = ToyTaskSpec.for_level(level)
    return {
        "obj_rot_range": spec.obj_rot_range,
        "obj_trans_range": spec.obj_trans_range,
        "frame_rot_range": spec.frame_rot_range,
        "frame_trans_range": spec.frame_trans_range,
    }


def _emit_class_bars(results: Sequence[SweepResult], path: Path) -> None:
    """Grouped per-class AP bars (one group per class, one bar per result)."""
    width, height, left, bottom, top = 760, 380, 60, 320, 40
    group = (width - left - 150) / len(CLASS_NAMES)
    bar = group / (len(results) + 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{width - 150}" y2="{bottom}" stroke="#333333"/>',
    ]
    for k, res in enumerate(results):
        color = svgplot.COLORS[k % len(svgplot.COLORS)]
        aps = res.rows[0].report.ap_per_class()
        for c, name in enumerate(CLASS_NAMES):
            ap = aps[name] or 0.0
            h = ap * (bottom - top)
            x = left + c * group + k * bar
            parts.append(f'<rect class="bar" x="{x:.2f}" y="{bottom - h:.2f}" width="{bar:.2f}" height="{h:.2f}" fill="{color}"/>')
        parts.append(
            f'<g class="legend-entry"><rect x="{width - 140}" y="{top + 20 * k}" width="12" height="12" fill="{color}"/>'
            f'<text x="{width - 122}" y="{top + 20 * k + 10}" font-size="11" font-family="sans-serif">'
            f"{svgplot._escape(res.label)}</text></g>"
        )
    for c, name in enumerate(CLASS_NAMES):
        x = left + c * group + group / 2
        parts.append(f'<text x="{x:.2f}" y="{bottom + 16}" text-anchor="middle" font-size="10" font-family="sans-serif">{name}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
