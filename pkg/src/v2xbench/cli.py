"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import bevio
from .emulator import V2xFrame, emulate_frame
from .fusion import (
    GateParams,
    GradientCheckError,
    TrainingDivergedError,
    gradient_check_report,
    mse_loss,
    save_params,
    train_toy,
)
from .harness import (
    SUITES,
    ConfigError,
    HarnessConfig,
    emit_csv,
    emit_summary_csv,
    emit_svg_plot,
    load_config,
    run_experiment_suite,
    run_sweep,
    scene_for,
)
from .metrics import Detection, evaluate
from .raster import decode_frame, rasterize_frame
from .rng import Channel, keyed_rng
from .scene import SceneParseError, SceneValidationError, generate_synthetic_scene, load_scene, save_scene

log = logging.getLogger("v2xbench")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GRADCHECK_TOLERANCE = 1e-6


def _json_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True) + "\n"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))


def _config(args) -> HarnessConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            seed=args.seed,
            emulation=dataclasses.replace(cfg.emulation, seed=args.seed),
            scene=dataclasses.replace(cfg.scene, seed=args.seed),
            sweep=dataclasses.replace(cfg.sweep, seed=args.seed) if cfg.sweep else None,
        )
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scene(args, cfg: HarnessConfig):
    if getattr(args, "scene", None):
        return load_scene(args.scene)
    return scene_for(cfg)


def _load_v2x(path: str) -> list[V2xFrame]:
    frames = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frames.append(V2xFrame.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SceneParseError(f"{path}:{lineno}: bad V2X record ({exc})") from None
    return frames


def _load_detections(path: str) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[rec["frame_id"]] = [Detection.from_dict(d) for d in rec["detections"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SceneParseError(f"{path}:{lineno}: bad detection record ({exc})") from None
    return out


# -- commands --------------------------------------------------------------


def cmd_gen_scene(args) -> int:
    cfg = _config(args)
    scene = generate_synthetic_scene(cfg.scene, scene_id=args.scene_id)
    path = _out_dir(args) / "scene.jsonl"
    save_scene(scene, path)
    log.info("wrote %d frames to %s", len(scene.frames), path)
    return EXIT_OK


def cmd_emulate(args) -> int:
    cfg = _config(args)
    scene = _scene(args, cfg)
    lines = [
        _json_line(emulate_frame(f, cfg.emulation, frame_index=k, scene_id=scene.scene_id).to_dict())
        for k, f in enumerate(scene.frames)
    ]
    _write_text(_out_dir(args) / "v2x.jsonl", "".join(lines))
    return EXIT_OK


def cmd_rasterize(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    for frame in _load_v2x(args.v2x):
        bev = rasterize_frame(frame, cfg.grid, norm=cfg.normalization, truncate=cfg.truncate)
        if bev.n_skipped:
            log.warning("frame %s: %d objects outside the grid", frame.frame_id, bev.n_skipped)
        bevio.save_bev(bev, out / f"{frame.frame_id}.bevt")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _config(args)
    lines = []
    for path in sorted(args.bev):
        tensor = bevio.load_bev(path)
        dets = decode_frame(tensor, cfg.peak_threshold)
        frame_id = Path(path).name.removesuffix(".bevt")
        lines.append(_json_line({"frame_id": frame_id, "detections": [d.to_dict() for d in dets]}))
    _write_text(_out_dir(args) / "detections.jsonl", "".join(lines))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    preds = _load_detections(args.pred)
    scene = load_scene(args.gt)
    gts = {f.frame_id: f.objects for f in scene.frames}
    unknown = set(preds) - set(gts)
    if unknown:
        raise SceneParseError(f"predictions reference unknown frames: {sorted(unknown)[:5]}")
    report = evaluate(preds, gts, cfg.metrics)
    out = _out_dir(args)
    if args.format == "csv":
        _write_text(out / "metrics.csv", report.to_csv())
    else:
        _write_text(out / "metrics.json", report.to_json() + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if cfg.sweep is None:
        raise ConfigError("config has no 'sweep' section")
    scene = _scene(args, cfg)
    spec = dataclasses.replace(cfg.sweep, repetitions=args.repetitions or cfg.sweep.repetitions)
    result = run_sweep(scene, spec, cfg, threads=args.threads)
    out = _out_dir(args)
    emit_csv(result, out / "sweep.csv")
    emit_summary_csv([result], out / "summary.csv")
    emit_svg_plot(result, out / "sweep.svg")
    _write_text(out / "run_info.json", json.dumps({"config_hash": result.config_hash, "git": result.git}, indent=2) + "\n")
    return EXIT_OK


def cmd_suite(args) -> int:
    cfg = _config(args)
    scene = _scene(args, cfg)
    names = SUITES if args.name.upper() == "ALL" else (args.name,)
    for name in names:
        run_experiment_suite(name, scene, cfg, _out_dir(args) / f"suite_{name.upper()}", threads=args.threads,
                             repetitions=args.repetitions or 1)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    cfg = _config(args)
    task = dataclasses.replace(cfg.toy, camera=cfg.camera)
    if args.seed is not None:
        task = dataclasses.replace(task, seed=args.seed)
    params, report = train_toy(task)
    out = _out_dir(args)
    save_params(params, out / "gate_params.bin", meta={"seed": task.seed, "task_digest": report["task_digest"]})
    _write_text(out / "train_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_text(out / "task.json", json.dumps(task.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    results = []
    worst = 0.0
    for k in range(args.trials):
        rng = keyed_rng(cfg.seed, "gradcheck", k, int(Channel.GRADCHECK))
        c_f, c_v, size = 3, 4, 4
        params = GateParams.init(c_f, c_v, kernel_size=args.kernel_size, seed=cfg.seed + k)
        params.w = rng.normal(0.0, 0.5, params.w.shape)
        params.alpha = rng.uniform(0.2, 1.5, c_v)
        ff = rng.normal(size=(c_f, size, size))
        fv = rng.normal(size=(c_v, size, size))
        target = rng.normal(size=(c_f, size, size))
        rep = gradient_check_report(params, ff, fv, mse_loss(target), step=args.step)
        worst = max(worst, max(rep.values()))
        results.append({"trial": k, **{name: float(v) for name, v in sorted(rep.items())}})
    summary = {"trials": results, "max_rel_error": worst, "tolerance": GRADCHECK_TOLERANCE, "step": args.step,
               "passed": worst < GRADCHECK_TOLERANCE}
    _write_text(_out_dir(args) / "gradcheck.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if worst >= GRADCHECK_TOLERANCE:
        raise GradientCheckError(f"max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:g}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="v2xbench", description="V2X emulation, BEV rasterization and robustness sweeps")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-scene", parents=[common], help="generate a synthetic scene (JSONL)")
    s.add_argument("--scene-id", default=None)
    s.set_defaults(func=cmd_gen_scene)

    s = sub.add_parser("emulate", parents=[common], help="emulate V2X messages for a scene")
    s.add_argument("--scene", help="scene JSONL (default: synthetic scene from config)")
    s.set_defaults(func=cmd_emulate)

    s = sub.add_parser("rasterize", parents=[common], help="rasterize V2X frames into BEVT tensors")
    s.add_argument("--v2x", required=True, help="V2X JSONL from 'emulate'")
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("decode", parents=[common], help="peak-decode BEVT tensors into detections")
    s.add_argument("bev", nargs="+", help="BEVT files")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", parents=[common], help="evaluate detections against a scene")
    s.add_argument("--pred", required=True, help="detections JSONL")
    s.add_argument("--gt", required=True, help="ground-truth scene JSONL")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="run the config's sweep")
    s.add_argument("--scene")
    s.add_argument("--repetitions", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("suite", parents=[common], help="run an experiment suite (A-E or all)")
    s.add_argument("--name", required=True, choices=[*SUITES, *(n.lower() for n in SUITES), "all", "ALL"])
    s.add_argument("--scene")
    s.add_argument("--repetitions", type=int)
    s.set_defaults(func=cmd_suite)

    s = sub.add_parser("train-toy", parents=[common], help="train the toy gated-fusion block")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the gate gradients")
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--kernel-size", type=int, choices=(1, 3), default=3)
    s.add_argument("--step", type=float, default=1e-5, help="central-difference step (default 1e-5)")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "step", 1.0) <= 0:
        print("error: --step must be > 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SceneParseError, SceneValidationError, bevio.BevFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GradientCheckError, TrainingDivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
