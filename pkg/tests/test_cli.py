import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from v2xbench.cli import main

CONFIG = {
    "seed": 11,
    "emulation": {"obj_trans": {"kind": "gaussian", "sigma": 0.3}, "frame_rot": {"kind": "gaussian", "sigma": 0.02}},
    "scene": {"n_frames": 2, "objects_per_frame": 20},
    "toy": {"grid_size": 16, "n_frames": 4, "objects_per_frame": 4, "epochs": 20},
    "sweep": {"kind": "single", "channel": "frame_trans", "values": [0, 0.5, 1.0], "repetitions": 2},
}


@pytest.fixture()
def cfg_path(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(CONFIG))
    return p


def run_pipeline(cfg, out: Path, threads: int) -> None:
    common = ["--config", str(cfg), "--out-dir", str(out), "--threads", str(threads)]
    assert main(["gen-scene", *common]) == 0
    assert main(["emulate", "--scene", str(out / "scene.jsonl"), *common]) == 0
    assert main(["rasterize", "--v2x", str(out / "v2x.jsonl"), *common]) == 0
    bevs = sorted(str(p) for p in out.glob("*.bevt"))
    assert main(["decode", *bevs, *common]) == 0
    assert main(["eval", "--pred", str(out / "detections.jsonl"), "--gt", str(out / "scene.jsonl"), *common]) == 0
    assert main(["eval", "--pred", str(out / "detections.jsonl"), "--gt", str(out / "scene.jsonl"),
                 "--format", "csv", *common]) == 0
    assert main(["sweep", "--scene", str(out / "scene.jsonl"), *common]) == 0
    assert main(["train-toy", *common]) == 0
    assert main(["gradcheck", "--trials", "3", *common]) == 0


def snapshot(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_full_pipeline_outputs(cfg_path, tmp_path):
    out = tmp_path / "run"
    run_pipeline(cfg_path, out, 1)
    frames = [json.loads(line) for line in (out / "scene.jsonl").read_text().splitlines()]
    assert len(frames) == 2
    assert len(list(out.glob("*.bevt"))) == 2 == len(list(out.glob("*.bevt.json")))
    dets = [json.loads(line) for line in (out / "detections.jsonl").read_text().splitlines()]
    assert {d["frame_id"] for d in dets} == {f["frame_id"] for f in frames}
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 < metrics["nds_prime"] <= 1.0
    assert (out / "metrics.csv").read_text().startswith("nds_prime,mAP")
    assert len((out / "sweep.csv").read_bytes().decode().strip().split("\r\n")) == 1 + 3 * 2
    assert "<polyline" in (out / "sweep.svg").read_text()
    assert json.loads((out / "gradcheck.json").read_text())["passed"] is True
    report = json.loads((out / "train_report.json").read_text())
    assert len(report["losses"]) == 20


def test_outputs_identical_across_runs_and_threads(cfg_path, tmp_path):
    run_pipeline(cfg_path, tmp_path / "a", 1)
    run_pipeline(cfg_path, tmp_path / "b", 4)
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], name


def test_seed_override_changes_output(cfg_path, tmp_path):
    assert main(["gen-scene", "--config", str(cfg_path), "--out-dir", str(tmp_path / "s1")]) == 0
    assert main(["gen-scene", "--config", str(cfg_path), "--seed", "12", "--out-dir", str(tmp_path / "s2")]) == 0
    assert (tmp_path / "s1/scene.jsonl").read_bytes() != (tmp_path / "s2/scene.jsonl").read_bytes()


def test_config_error_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("sede: 3\n")
    assert main(["gen-scene", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["gen-scene", "--config", str(tmp_path / "nope.yaml"), "--out-dir", str(tmp_path)]) == 2
    assert main(["sweep", "--out-dir", str(tmp_path)]) == 2  # no sweep section
    assert main(["gen-scene", "--threads", "0", "--out-dir", str(tmp_path)]) == 2


def test_data_error_exit_3(tmp_path, capsys):
    assert main(["emulate", "--scene", str(tmp_path / "missing.jsonl"), "--out-dir", str(tmp_path)]) == 3
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"frame_id": "f", "timestamp_us": 0, "objects": [}\n')
    assert main(["emulate", "--scene", str(broken), "--out-dir", str(tmp_path)]) == 3
    bev = tmp_path / "x.bevt"
    bev.write_bytes(b"NOPE" + bytes(16))
    assert main(["decode", str(bev), "--out-dir", str(tmp_path)]) == 3
    assert "data error" in capsys.readouterr().err


def test_numerical_failure_exit_4(tmp_path):
    assert main(["gradcheck", "--trials", "1", "--step", "0.3", "--out-dir", str(tmp_path)]) == 4
    assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"] is False


def test_suite_command(cfg_path, tmp_path):
    assert main(["suite", "--name", "d", "--config", str(cfg_path), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "suite_D" / "class_ap.csv").exists()


def test_console_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "v2xbench.cli", "gen-scene", "--out-dir", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "scene.jsonl").exists()
