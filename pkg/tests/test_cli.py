"""Command-line tests driven through main() in-process."""

import json
import os

import numpy as np
import pytest

from osdg.cli import main
from osdg.dataio import load_cube
from osdg.pipeline import RunConfig
from tests.test_pipeline import tiny_cfg

SCENE = {
    "seed": 5,
    "num_known": 3,
    "num_unknown": 1,
    "bands": 16,
    "height": 32,
    "width": 32,
    "pixels_per_known_source": 60,
    "pixels_per_known_target": 55,
    "pixels_per_unknown": 55,
}


@pytest.fixture()
def workspace(tmp_path):
    scene_path = tmp_path / "scene.json"
    scene_path.write_text(json.dumps(SCENE))
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(tiny_cfg().to_json())
    return tmp_path, str(scene_path), str(cfg_path)


def _synth(ws):
    tmp_path, scene_path, _cfg = ws
    data_dir = tmp_path / "data"
    assert main(["synth", "--config", scene_path, "--out", str(data_dir)]) == 0
    return str(data_dir / "source.hsic"), str(data_dir / "target.hsic")


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train", "--no-such-flag"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err


def test_help_exits_zero():
    assert main(["--help"]) == 0


def test_synth_writes_cubes_and_manifest(workspace):
    tmp_path, scene_path, _ = workspace
    src_path, tgt_path = _synth(workspace)
    source = load_cube(src_path)
    target = load_cube(tgt_path)
    assert source.num_classes == 3
    assert np.any(target.labels == 65535)
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
    assert set(manifest["artifacts"]) == {"source", "target"}


def test_synth_seed_override_changes_scene(workspace, tmp_path):
    _tmp, scene_path, _ = workspace
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["synth", "--config", scene_path, "--out", str(a)]) == 0
    assert main(["synth", "--config", scene_path, "--out", str(b), "--seed", "9"]) == 0
    blob_a = (a / "source.hsic").read_bytes()
    blob_b = (b / "source.hsic").read_bytes()
    assert blob_a != blob_b


def test_invalid_config_exits_one_before_work(workspace, capsys):
    tmp_path, scene_path, cfg_path = workspace
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**json.loads(open(cfg_path).read()), "alpha": 0.2}))
    out = tmp_path / "run"
    src, _ = _synth(workspace)
    code = main(["train", "--config", str(bad), "--data", src, "--out", str(out)])
    assert code == 1
    assert not out.exists()
    assert "sweep grid" in capsys.readouterr().err


def test_missing_files_exit_one(workspace):
    tmp_path, _scene, cfg_path = workspace
    assert main(["train", "--config", cfg_path, "--data", str(tmp_path / "nope.hsic"), "--out", str(tmp_path / "r")]) == 1
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--data", "x", "--out", "y"]) == 1


def test_full_command_chain(workspace, capsys):
    tmp_path, _scene, cfg_path = workspace
    src, tgt = _synth(workspace)
    run_dir = str(tmp_path / "run")

    assert main(["train", "--config", cfg_path, "--data", src, "--out", run_dir]) == 0
    assert os.path.isfile(os.path.join(run_dir, "model.npz"))
    assert os.path.isfile(os.path.join(run_dir, "history.csv"))

    # eval before calibrate is a validation error
    assert main(["eval", "--config", cfg_path, "--run", run_dir, "--target", tgt]) == 1

    assert main(["calibrate", "--config", cfg_path, "--run", run_dir, "--data", src]) == 0
    assert os.path.isfile(os.path.join(run_dir, "calibration.csv"))

    assert main(["eval", "--config", cfg_path, "--run", run_dir, "--target", tgt]) == 0
    assert os.path.isfile(os.path.join(run_dir, "metrics.csv"))
    assert os.path.isfile(os.path.join(run_dir, "classification_map.bmp"))
    assert "HOS" in capsys.readouterr().out

    assert main(["report", "--config", cfg_path, "--run", run_dir, "--target", tgt]) == 0
    for table in ("branch_frequency", "class_uncertainty", "evidence_entropy",
                  "evidence_uncertainty", "pathway_uncertainty"):
        assert os.path.isfile(os.path.join(run_dir, f"{table}.csv"))
    for plot in ("branch_frequency", "class_uncertainty", "evidence_uncertainty", "pathway_uncertainty"):
        assert os.path.isfile(os.path.join(run_dir, f"{plot}.svg"))

    manifest = json.loads(open(os.path.join(run_dir, "manifest.json")).read())
    for name in ("model", "history", "calibration", "metrics", "branch_frequency", "branch_frequency_plot"):
        assert name in manifest["artifacts"]


def test_run_dir_env_var_fallback(workspace, monkeypatch):
    tmp_path, _scene, cfg_path = workspace
    src, _tgt = _synth(workspace)
    run_dir = tmp_path / "env_run"
    monkeypatch.setenv("OSDG_RUN_DIR", str(run_dir))
    assert main(["train", "--config", cfg_path, "--data", src]) == 0
    assert (run_dir / "model.npz").is_file()
    monkeypatch.delenv("OSDG_RUN_DIR")
    assert main(["train", "--config", cfg_path, "--data", src]) == 1


def test_config_hash_mismatch_rejected(workspace):
    tmp_path, _scene, cfg_path = workspace
    src, _tgt = _synth(workspace)
    run_dir = str(tmp_path / "run")
    assert main(["train", "--config", cfg_path, "--data", src, "--out", run_dir]) == 0
    other = tmp_path / "other.json"
    other.write_text(tiny_cfg(alpha=0.9).to_json())
    assert main(["calibrate", "--config", str(other), "--run", run_dir, "--data", src]) == 1


def test_ablate_command(workspace):
    tmp_path, _scene, cfg_path = workspace
    src, tgt = _synth(workspace)
    out = str(tmp_path / "ablation")
    code = main(["ablate", "--config", cfg_path, "--data", src, "--target", tgt,
                 "--out", out, "--variants", "full,no_uncertainty", "--seed", "0"])
    assert code == 0
    lines = open(os.path.join(out, "ablation.csv")).read().splitlines()
    assert len(lines) == 3
    assert main(["ablate", "--config", cfg_path, "--data", src, "--target", tgt,
                 "--out", out, "--variants", "full,bogus"]) == 1


def test_runtime_failure_exits_two(workspace, capsys):
    tmp_path, _scene, cfg_path = workspace
    src, _tgt = _synth(workspace)
    # a target with mismatched bands passes validation (file loads fine) but
    # fails inside evaluation
    run_dir = str(tmp_path / "run")
    assert main(["train", "--config", cfg_path, "--data", src, "--out", run_dir]) == 0
    assert main(["calibrate", "--config", cfg_path, "--run", run_dir, "--data", src]) == 0
    from osdg.dataio import HSICube, save_cube

    wrong = HSICube(
        data=np.random.default_rng(0).uniform(0.1, 0.9, size=(16, 16, 9)).astype(np.float32),
        labels=np.ones((16, 16), dtype=np.int64),
        num_classes=3,
        class_names=["a", "b", "c"],
    )
    wrong_path = str(tmp_path / "wrong.hsic")
    save_cube(wrong, wrong_path)
    assert main(["eval", "--config", cfg_path, "--run", run_dir, "--target", wrong_path]) == 2
    assert "failed" in capsys.readouterr().err
