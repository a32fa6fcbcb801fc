import csv
import time

import numpy as np
import pytest

from stinr.cli import main, parse_times, read_config_file, CliError
from stinr.data import make_synthetic_clip
from stinr.frames_io import read_frame, write_png

SMALL = ["--tiny", "--stage1-iters", "2", "--stage2-iters", "0", "--patch", "8", "--stage1-scale", "2",
         "--height", "24", "--width", "24", "--eval-every", "2"]


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--synthetic", "moving_square", "--out-dir", str(out)] + SMALL) == 0
    return out / "checkpoint_0000002.ckpt"


@pytest.fixture()
def inputs(tmp_path):
    rng = np.random.default_rng(0)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    write_png(a, rng.uniform(0, 1, (3, 6, 8)))
    write_png(b, rng.uniform(0, 1, (3, 6, 8)))
    return str(a), str(b)


def test_train_writes_checkpoint_and_metrics(checkpoint):
    assert checkpoint.exists()
    with open(checkpoint.parent / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "lr", "loss", "val_psnr", "val_ssim"] and len(rows) == 2


def test_train_same_seed_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["train", "--no-validate", "--seed", "4", "--out-dir", str(tmp_path / d)] + SMALL) == 0
    a = (tmp_path / "a" / "checkpoint_0000002.ckpt").read_bytes()
    b = (tmp_path / "b" / "checkpoint_0000002.ckpt").read_bytes()
    assert a == b


def test_config_file_and_unknown_key(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text("# desk run\nstage1-iters = 2\nstage2_iters=0\npatch=8\n")
    assert read_config_file(good) == {"stage1_iters": 2, "stage2_iters": 0, "patch": 8}
    bad = tmp_path / "bad.cfg"
    bad.write_text("stage1_iters=2\nlearning_rate=0.1\n")
    assert main(["train", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_invalid_value_exit_two(tmp_path, capsys):
    assert main(["train", "--batch", "two", "--out-dir", str(tmp_path)]) == 2
    assert "batch" in capsys.readouterr().err


def test_decode_nine_frames(checkpoint, inputs, tmp_path):
    out = tmp_path / "dec"
    assert main(["decode", str(checkpoint), *inputs, "--space-scale", "4", "--num-frames", "9",
                 "--out-dir", str(out)]) == 0
    files = sorted(out.glob("*.png"))
    assert len(files) == 9
    assert all(read_frame(f).shape == (3, 24, 32) for f in files)


def test_decode_high_scale_and_region(checkpoint, inputs, tmp_path):
    assert main(["decode", str(checkpoint), *inputs, "--space-scale", "12", "--times", "0.5",
                 "--out-dir", str(tmp_path / "x12")]) == 0
    assert read_frame(next((tmp_path / "x12").glob("*.png"))).shape == (3, 72, 96)
    assert main(["decode", str(checkpoint), *inputs, "--space-scale", "2", "--times", "0.5", "--region",
                 "0,0,0.5,1", "--format", "ppm", "--out-dir", str(tmp_path / "reg")]) == 0
    assert read_frame(next((tmp_path / "reg").glob("*.ppm"))).shape == (3, 12, 8)


@pytest.mark.parametrize("extra", [["--times", "0.5,0.2"], ["--times", "1.5"], ["--region", "0,0,1"],
                                   ["--space-scale", "0.5"]])
def test_decode_bad_requests(checkpoint, inputs, tmp_path, extra):
    assert main(["decode", str(checkpoint), *inputs, "--out-dir", str(tmp_path)] + extra) == 2


def test_decode_missing_checkpoint(inputs, tmp_path):
    assert main(["decode", str(tmp_path / "none.ckpt"), *inputs]) == 2


def test_decode_extrapolation_flag(checkpoint, inputs, tmp_path):
    assert main(["decode", str(checkpoint), *inputs, "--times", "1.25", "--allow-extrapolation",
                 "--out-dir", str(tmp_path)]) == 0


def test_parse_times():
    assert parse_times(None, 3) == (0.0, 0.5, 1.0)
    assert parse_times("0.1,0.7", None) == (0.1, 0.7)
    with pytest.raises(CliError):
        parse_times("0.1", 3)


def write_clip(path, length, seed=0):
    path.mkdir()
    for k, f in enumerate(make_synthetic_clip("moving_square", length, 16, 16, seed).frames):
        write_png(path / f"{k:03}.png", f)
    return path


def test_eval_ground_truth_stub(tmp_path, capsys):
    frames = write_clip(tmp_path / "clip", 18)
    assert main(["eval", "ground-truth", str(frames), "--space-scale", "1", "--mode", "average",
                 "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "eval_report.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["mode", "scale", "psnr", "ssim"]
    assert float(rows[1][2]) == 99.0 and float(rows[1][3]) == pytest.approx(1.0)
    assert "99.0000" in capsys.readouterr().out


def test_eval_checkpoint(checkpoint, tmp_path):
    frames = write_clip(tmp_path / "clip", 9)
    assert main(["eval", str(checkpoint), str(frames), "--space-scale", "2", "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "eval_report.csv") as fh:
        psnr = float(list(csv.reader(fh))[1][2])
    assert 0 < psnr < 99


def test_eval_short_clip(tmp_path, capsys):
    frames = write_clip(tmp_path / "clip", 8)
    assert main(["eval", "ground-truth", str(frames), "--space-scale", "1"]) == 2
    assert "8" in capsys.readouterr().err


def test_eval_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["eval", "ground-truth", str(tmp_path / "empty")]) == 2


def test_gradcheck_passes_quickly(capsys):
    t0 = time.perf_counter()
    assert main(["gradcheck", "--tiny"]) == 0
    assert time.perf_counter() - t0 < 60
    assert "all passed" in capsys.readouterr().out


def test_gradcheck_injected_fault(capsys):
    assert main(["gradcheck", "--tiny", "--inject-fault", "sine"]) == 1
    out = capsys.readouterr().out
    assert "worst offender: op=sine" in out
    from stinr import numerics as nx
    assert "sine" not in nx.FAULTS


def test_ablate_unknown_variant(capsys):
    assert main(["ablate", "--variants", "f,q"]) == 2
    assert "q" in capsys.readouterr().err


def test_ablate_rows(tmp_path, capsys):
    assert main(["ablate", "--variants", "f", "--iters", "2", "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["full", "-f"]
    assert "-f" in capsys.readouterr().out
