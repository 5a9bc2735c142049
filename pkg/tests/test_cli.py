import csv
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from assembloid.cli import main, task_rng
from assembloid.config import ConfigError, ExperimentConfig, from_dict, load_config
from assembloid.geometry import Part, Pose, Scene
from assembloid.io import load_scene, save_scene, write_json


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    return code, json.loads(out[0])


@pytest.fixture
def dataset(tmp_path, capsys):
    d = tmp_path / "ds"
    code, summary = run(capsys, "gen", "--count", 3, "--points-per-part", 48, "--seed", 5, "--out", d)
    assert code == 0 and summary["scenes"] == 3
    return d


def test_gen_layout_and_determinism(tmp_path, capsys, dataset):
    ids = json.loads((dataset / "manifest.json").read_text())["scenes"]
    assert ids == sorted(p.name for p in dataset.iterdir() if p.is_dir())
    again = tmp_path / "again"
    run(capsys, "gen", "--count", 3, "--points-per-part", 48, "--seed", 5, "--out", again)
    for f in ["manifest.json"] + [f"{sid}/scene.json" for sid in ids] + [f"{ids[0]}/part_000.ply"]:
        assert (dataset / f).read_bytes() == (again / f).read_bytes()


def test_gen_count_ten(tmp_path, capsys):
    run(capsys, "gen", "--count", 10, "--points-per-part", 8, "--out", tmp_path / "ten")
    assert sum(p.is_dir() for p in (tmp_path / "ten").iterdir()) == 10


def test_scene_manifest_round_trip(tmp_path, dataset):
    scene, manifest = load_scene(dataset / "scene_0001")
    save_scene(tmp_path / "copy", scene, manifest["scene_id"], manifest["seed"], extra={"family": manifest["family"]})
    assert (tmp_path / "copy" / "scene.json").read_bytes() == (dataset / "scene_0001" / "scene.json").read_bytes()
    back, _ = load_scene(tmp_path / "copy")
    np.testing.assert_array_equal(back.render(), scene.render())


def test_assemble_outputs(tmp_path, capsys, dataset):
    out = tmp_path / "res"
    code, summary = run(capsys, "assemble", "--dataset", dataset, "--out", out, "--workers", 1,
                        "--snapshot-every", 10, "--T", 50, "--level", "moderate")
    assert code == 0 and summary["succeeded"] == 3
    run_dir = out / "scene_0000" / "t0"
    report = json.loads((run_dir / "report.json").read_text())
    for key in ("scd", "pa", "fpa", "rmse_trans", "rmse_rot"):
        assert np.isfinite(report["metrics"][key])
    snaps = sorted(p.name for p in (run_dir / "snapshots").iterdir())
    assert snaps == [f"iter_{t:04d}.ply" for t in (0, 10, 20, 30, 40, 50)]
    assert len((run_dir / "trace.jsonl").read_text().splitlines()) == 51

    rows = list(csv.reader((out / "aggregate.csv").open()))
    assert rows[0] == ["run", "SCD(x1e-3)", "PA(%)", "RMSE(Trans)(x1e-2)", "RMSE(Rot)", "fPA(%)"]
    pas = [json.loads((out / sid / "t0" / "report.json").read_text())["metrics"]["pa"] * 100.0
           for sid in ("scene_0000", "scene_0001", "scene_0002")]
    assert float(rows[-1][2]) == float(np.mean(pas))
    assert summary["mean"]["PA(%)"] == float(np.mean(pas))


def test_assemble_is_byte_identical_across_reruns_and_workers(tmp_path, capsys, dataset):
    a, b = tmp_path / "a", tmp_path / "b"
    run(capsys, "assemble", "--dataset", dataset, "--out", a, "--workers", 1, "--T", 10, "--collisions")
    run(capsys, "assemble", "--dataset", dataset, "--out", b, "--workers", 3, "--T", 10, "--collisions")
    for sid in ("scene_0000", "scene_0002"):
        for f in ("report.json", "trace.jsonl"):
            assert (a / sid / "t0" / f).read_bytes() == (b / sid / "t0" / f).read_bytes()
    assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()


def test_trials_use_distinct_streams(tmp_path, capsys, dataset):
    out = tmp_path / "r"
    run(capsys, "assemble", "--dataset", dataset, "--out", out, "--workers", 1, "--T", 2, "--trials", 2)
    t0 = (out / "scene_0000" / "t0" / "trace.jsonl").read_text().splitlines()[0]
    t1 = (out / "scene_0000" / "t1" / "trace.jsonl").read_text().splitlines()[0]
    assert t0 != t1
    a, b = task_rng(1, "scene_0000", 0), task_rng(1, "scene_0000", 0)
    assert a[0].random() == b[0].random()


def test_partial_and_total_failure_exit_codes(tmp_path, capsys, dataset):
    manifest = json.loads((dataset / "manifest.json").read_text())
    manifest["scenes"].append("scene_missing")
    write_json(dataset / "manifest.json", manifest)
    code, summary = run(capsys, "assemble", "--dataset", dataset, "--out", tmp_path / "p", "--workers", 1, "--T", 2)
    assert code == 2 and summary["failed"][0]["scene_id"] == "scene_missing"
    manifest["scenes"] = ["scene_missing"]
    write_json(dataset / "manifest.json", manifest)
    code, _ = run(capsys, "assemble", "--dataset", dataset, "--out", tmp_path / "q", "--workers", 1, "--T", 2)
    assert code == 1


def test_baseline_outputs(tmp_path, capsys, dataset):
    out = tmp_path / "base"
    code, summary = run(capsys, "baseline", "--dataset", dataset, "--out", out, "--workers", 1,
                        "--iterations", 20, "--level", "excessive")
    assert code == 0
    d = out / "scene_0000" / "t0"
    assert (d / "final.ply").is_file() and (d / "final" / "scene.json").is_file()
    rows = list(csv.reader((d / "loss_curve.csv").open()))
    assert rows[0] == ["step", "loss", "best"] and len(rows) >= 2


def test_evaluate_identical_and_swapped(tmp_path, capsys, dataset):
    code, summary = run(capsys, "evaluate", "--pred", dataset, "--gt", dataset, "--out", tmp_path / "e")
    assert code == 0
    assert summary["mean"]["PA(%)"] == 100.0 and summary["mean"]["fPA(%)"] == 100.0
    assert summary["mean"]["SCD(x1e-3)"] == 0.0

    r = np.random.default_rng(0)
    leg = r.uniform(-0.5, 0.5, (32, 3)) * [0.05, 0.05, 0.4]
    seat = r.uniform(-0.5, 0.5, (32, 3)) * [0.5, 0.5, 0.05]
    corners = [(-0.2, -0.2), (0.2, -0.2), (0.2, 0.2), (-0.2, 0.2)]
    parts = [Part(0, seat, Pose(trans=[0, 0, 0.2]))] + [Part(k + 1, leg, Pose(trans=[x, y, 0])) for k, (x, y) in enumerate(corners)]
    gt = Scene(tuple(parts), "stool")
    poses = gt.poses
    poses[1], poses[2] = poses[2], poses[1]
    save_scene(tmp_path / "gt" / "stool", gt, "stool")
    save_scene(tmp_path / "pred" / "stool", gt.with_poses(poses), "stool")
    save_scene(tmp_path / "pred" / "orphan", gt, "orphan")
    code, summary = run(capsys, "evaluate", "--pred", tmp_path / "pred", "--gt", tmp_path / "gt", "--out", tmp_path / "e2")
    assert code == 2 and summary["missing"] == ["orphan"]
    rep = json.loads((tmp_path / "e2" / "evaluation.json").read_text())["scenes"]["stool"]["metrics"]
    assert rep["fpa"] > rep["pa"]
    header = (tmp_path / "e2" / "evaluation.csv").read_text().splitlines()[0]
    assert header == "run,SCD(x1e-3),PA(%),RMSE(Trans)(x1e-2),RMSE(Rot),fPA(%)"


def test_plot_outputs(tmp_path, capsys, dataset):
    out = tmp_path / "res"
    run(capsys, "assemble", "--dataset", dataset, "--out", out, "--workers", 1, "--T", 50)
    code, summary = run(capsys, "plot", out)
    assert code == 0
    svg = (out / "plots" / "pa.svg").read_text()
    first = (out / "plots" / "pa.svg").read_bytes()
    run(capsys, "plot", out)
    assert (out / "plots" / "pa.svg").read_bytes() == first
    lines = re.findall(r'<polyline data-series="([^"]+)" data-x="[^"]*" data-y="([^"]*)" points="([^"]*)"', svg)
    assert len(lines) == 3
    for name, ys, pts in lines:
        assert len(pts.split()) == 51
        report = json.loads((out / name / "report.json").read_text())
        assert float(ys.split()[-1]) == report["metrics"]["pa"]


def test_plot_levels(tmp_path, capsys, dataset):
    dirs = []
    for level in ("slight", "excessive"):
        d = tmp_path / level
        run(capsys, "assemble", "--dataset", dataset, "--out", d, "--workers", 1, "--T", 3, "--level", level)
        dirs.append(d)
    code, summary = run(capsys, "plot", *dirs, "--out", tmp_path / "cmp")
    assert (tmp_path / "cmp" / "plots" / "levels_pa.svg").is_file()


def test_plot_with_no_traces_fails(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, summary = run(capsys, "plot", tmp_path / "empty")
    assert code == 1 and summary["files"] == []


def test_config_rejects_unknown_keys(tmp_path, capsys, dataset):
    (tmp_path / "bad.json").write_text(json.dumps({"sed": 3}))
    code, summary = run(capsys, "assemble", "--config", tmp_path / "bad.json", "--dataset", dataset)
    assert code == 1 and "sed" in summary["error"]
    with pytest.raises(ConfigError):
        from_dict(ExperimentConfig, {"assembly": {"collision": {"radius": 0.1, "radus": 1}}})
    with pytest.raises(ConfigError):
        from_dict(ExperimentConfig, {"assembly": {"T": 0}})


def test_config_file_round_trip(tmp_path):
    cfg = from_dict(ExperimentConfig, {"seed": 4, "level": "moderate", "assembly": {"z": 4, "collision": {"enabled": True}}})
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_json()))
    assert load_config(tmp_path / "c.json").to_json() == cfg.to_json()


def test_missing_dataset_and_checkpoint(tmp_path, capsys, dataset):
    code, _ = run(capsys, "assemble", "--dataset", tmp_path / "nowhere")
    assert code == 1
    code, _ = run(capsys, "assemble", "--dataset", dataset, "--denoiser", "tiny", "--checkpoint", tmp_path / "x.ckpt")
    assert code == 1


def test_env_var_sets_output_root(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ASSEMBLOID_OUT", str(tmp_path / "root"))
    run(capsys, "gen", "--count", 1, "--points-per-part", 8)
    assert (tmp_path / "root" / "dataset" / "manifest.json").is_file()


def test_train_denoiser_command(tmp_path, capsys, dataset):
    code, summary = run(capsys, "train-denoiser", "--dataset", dataset, "--epochs", 3, "--out", tmp_path / "den")
    assert code == 0 and (tmp_path / "den" / "denoiser.ckpt").is_file()
    code, summary = run(capsys, "assemble", "--dataset", dataset, "--denoiser", "tiny", "--checkpoint",
                        tmp_path / "den" / "denoiser.ckpt", "--denoise-mode", "ddpm", "--T", 2,
                        "--workers", 1, "--out", tmp_path / "tiny_res")
    assert code == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "assembloid", "gen", "--count", "1", "--points-per-part", "8",
                           "--out", str(tmp_path / "d")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["scenes"] == 1
