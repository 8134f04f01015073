import json

import numpy as np

from framescope.cli import dispatch
from framescope.core import read_png, write_png
from framescope.sweep import validate_report


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0
    assert "sweep" in capsys.readouterr().out


def test_unknown_subcommand_is_usage_error(capsys):
    assert dispatch(["explode"]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_flag_value_is_usage_error():
    assert dispatch(["synth", "--out", "x", "--count", "many"]) == 2


def test_unknown_stage_is_runtime_error(tmp_path, capsys):
    write_png(tmp_path / "a.png", np.zeros((4, 4, 3)))
    assert dispatch(["preprocess", "--input", str(tmp_path / "a.png"), "--strategy", "SR+ZZ", "--out", str(tmp_path / "b.png")]) == 1
    assert "ZZ" in capsys.readouterr().err


def test_bad_config_file(tmp_path):
    (tmp_path / "cfg.json").write_text("{nope")
    assert dispatch(["sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "o")]) == 2


def test_preprocess_directory(tmp_path, rng):
    src = tmp_path / "in"
    for k in range(2):
        write_png(src / f"im{k}.png", rng.random((8, 8, 3)))
    assert dispatch(["preprocess", "--input", str(src), "--strategy", "CE", "--out", str(tmp_path / "out")]) == 0
    out = read_png(tmp_path / "out" / "im1.png")
    assert out.min() == 0.0 and out.max() == 1.0


def test_rectify_quad(tmp_path, rng):
    img = np.floor(rng.random((20, 20, 3)) * 255 + 0.5) / 255
    write_png(tmp_path / "a.png", img)
    args = ["rectify", "--image", str(tmp_path / "a.png"), "--quad", "2,3", "11,3", "11,12", "2,12",
            "--width", "10", "--height", "10", "--out", str(tmp_path / "r.png")]
    assert dispatch(args) == 0
    assert np.array_equal(read_png(tmp_path / "r.png"), img[3:13, 2:12])


def test_rectify_needs_a_quad(tmp_path):
    write_png(tmp_path / "a.png", np.zeros((4, 4, 3)))
    assert dispatch(["rectify", "--image", str(tmp_path / "a.png"), "--out", str(tmp_path / "r.png")]) == 2


def test_synth_train_eval(tmp_path):
    data = tmp_path / "data"
    assert dispatch(["synth", "--out", str(data), "--count", "6", "--side", "32", "--seed", "4"]) == 0
    assert (data / "annotations.json").is_file()
    model = tmp_path / "m.bin"
    args = ["train", "--data", str(data), "--out", str(model), "--split", "4,2,0", "--side", "32",
            "--base", "2", "--depth", "1", "--steps", "2", "--history", str(tmp_path / "h.json")]
    assert dispatch(args) == 0
    hist = json.loads((tmp_path / "h.json").read_text())
    assert len(hist["losses"]) == 2
    assert dispatch(["eval", "--data", str(data), "--model", str(model), "--out", str(tmp_path / "e.json")]) == 0
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["images"] == 6 and set(doc["iou"]) == {"wframe", "dent", "bend", "scratch"}


def test_sweep_and_report(tmp_path, monkeypatch):
    cfg = {
        "synth": {"count": 8, "side": 32, "seed": 1},
        "split": [4, 2, 2],
        "model": {"input_side": 32, "base_channels": 2, "depth": 1},
        "train": {"steps": 2, "batch_size": 2},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    monkeypatch.setenv("FRAMESCOPE_CACHE", str(tmp_path / "cache"))
    out = tmp_path / "out"
    assert dispatch(["sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(out), "--mode", "permutations", "--strategy", "CE+IN"]) == 0
    doc = json.loads((out / "report.json").read_text())
    validate_report(doc)
    assert [r["strategy"] for r in doc["rows"]] == ["IN+CE", "CE+IN"]
    assert any((tmp_path / "cache").iterdir())
    assert not (out / "cache").exists()
    assert dispatch(["report", "--report", str(out / "report.json"), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "report.json").read_bytes() == (out / "report.json").read_bytes()
