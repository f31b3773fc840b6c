import json

import numpy as np

from conftest import write_blob_dataset
from styleshift import cli
from styleshift.raster import ImageRaster, load_image, save_image


def _write_rgb(path, rng, h=12, w=12):
    save_image(ImageRaster(rng.random((h, w, 3)).astype(np.float32)), path)


def test_version_lists_algorithms(capsys):
    assert cli.main(["--version"]) == 0
    out = capsys.readouterr().out
    assert "styleshift" in out
    assert "nst" in out and "strotss" in out
    assert "cyclegan" in out and "cut" in out


def test_no_command_is_usage_error(capsys):
    assert cli.main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_transfer_writes_output_and_trace(tmp_path, rng):
    style = tmp_path / "style.png"
    content = tmp_path / "content.png"
    _write_rgb(style, rng)
    _write_rgb(content, rng)
    out = tmp_path / "out.png"
    trace = tmp_path / "trace.csv"
    code = cli.main(
        [
            "transfer",
            "--algorithm", "nst",
            "--style", str(style),
            "--content", str(content),
            "--out", str(out),
            "--iterations", "2",
            "--trace-csv", str(trace),
        ]
    )
    assert code == 0
    assert load_image(out).values.shape == (12, 12, 3)
    lines = trace.read_text().strip().split("\n")
    assert lines[0] == "iteration,total,content,style"
    assert len(lines) == 4  # header + iterations 0..2


def test_transfer_refuses_overwrite(tmp_path, rng, capsys):
    style = tmp_path / "style.png"
    _write_rgb(style, rng)
    out = tmp_path / "out.png"
    out.write_bytes(b"occupied")
    code = cli.main(
        ["transfer", "--algorithm", "nst", "--style", str(style),
         "--content", str(style), "--out", str(out), "--iterations", "0"]
    )
    assert code == 1
    assert "overwrite" in capsys.readouterr().err
    assert out.read_bytes() == b"occupied"


def test_unknown_algorithm_is_usage_error(tmp_path, rng, capsys):
    style = tmp_path / "style.png"
    _write_rgb(style, rng)
    code = cli.main(
        ["transfer", "--algorithm", "bogus", "--style", str(style),
         "--content", str(style), "--out", str(tmp_path / "o.png")]
    )
    assert code == 1
    assert "unknown algorithm" in capsys.readouterr().err


def test_missing_input_is_reported(tmp_path, capsys):
    code = cli.main(
        ["transfer", "--algorithm", "nst", "--style", str(tmp_path / "none.png"),
         "--content", str(tmp_path / "none.png"), "--out", str(tmp_path / "o.png")]
    )
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_config_file_supplies_defaults(tmp_path, rng):
    style = tmp_path / "style.png"
    content = tmp_path / "content.png"
    _write_rgb(style, rng)
    _write_rgb(content, rng)
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"transfer.iterations": 1}))
    out = tmp_path / "out.png"
    trace = tmp_path / "trace.csv"
    code = cli.main(
        ["--config", str(config), "transfer", "--algorithm", "nst",
         "--style", str(style), "--content", str(content),
         "--out", str(out), "--trace-csv", str(trace)]
    )
    assert code == 0
    assert len(trace.read_text().strip().split("\n")) == 3  # header + iterations 0..1


def test_bad_config_file(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text("{not json")
    assert cli.main(["--config", str(config), "report", "--in", "x"]) == 1


def test_translate_requires_subcommand(capsys):
    assert cli.main(["translate"]) == 1


def test_segment_train_then_evaluate(tmp_path, rng, capsys):
    train_img, train_mask = write_blob_dataset(tmp_path / "train", n_images=6, seed=0)
    val_img, val_mask = write_blob_dataset(tmp_path / "val", n_images=2, seed=1)
    ckpt = tmp_path / "model.ckpt"
    code = cli.main(
        ["segment-train",
         "--train-images", str(train_img), "--train-masks", str(train_mask),
         "--val-images", str(val_img), "--val-masks", str(val_mask),
         "--out", str(ckpt), "--input-size", "32", "--max-epochs", "8",
         "--patience", "8", "--lr", "3e-3", "--seed", "0"]
    )
    assert code == 0
    assert ckpt.exists()

    report = tmp_path / "eval.json"
    code = cli.main(
        ["evaluate", "--model", str(ckpt), "--images", str(val_img),
         "--masks", str(val_mask), "--out", str(report)]
    )
    assert code == 0
    doc = json.loads(report.read_text())
    assert 0.0 <= doc["mean_iou_percent"] <= 100.0
    assert len(doc["per_image"]) == 2


def test_report_rerender(tmp_path, capsys):
    doc = {
        "baseline": {"m": 40.0},
        "baseline_name": "base",
        "methods": [{"name": "nst", "values": {"m": 55.0}, "deltas": {"m": 15.0}}],
        "metadata": {},
    }
    src = tmp_path / "report.json"
    src.write_text(json.dumps(doc))
    assert cli.main(["report", "--in", str(src), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert "nst,m,40.00,55.00,+15.00,up" in out

    dest = tmp_path / "report.txt"
    assert cli.main(["report", "--in", str(src), "--out", str(dest)]) == 0
    assert "55.00↑" in dest.read_text()
