import csv
import subprocess
import sys

import numpy as np
import pytest

from vegam.cli import read_eval, run
from vegam.gaze import GazeSample, write_gaze_csv
from vegam.mapio import read_pfm
from vegam.model import load_checkpoint

FAST = ["--max-epochs", "2", "--batch-size", "16", "--channels", "4,4,4,8,8,8"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run(["gen-data", "--classes", "3", "--per-class", "10", "--side", "64", "--seed", "7", "--out", str(d)]) == 0
    assert run(["oracle-fixmaps", "--data", str(d), "--out", str(d)]) == 0
    return d


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestPipeline:
    def test_gen_data_then_train(self, dataset, tmp_path):
        out = tmp_path / "run"
        assert run(["train", "--mode", "baseline", "--data", str(dataset), "--out", str(out)] + FAST) == 0
        for name in ("config.txt", "metrics.csv", "model.gzcm", "eval.csv", "summary.txt"):
            assert (out / name).exists(), name
        assert rows(out / "eval.csv")[0] == ["sample_id", "true", "pred", "confidence_true"]
        assert rows(out / "metrics.csv")[0][:2] == ["epoch", "train_ce"]
        assert load_checkpoint(out / "model.gzcm").config.channels == (4, 4, 4, 8, 8, 8)

    def test_vegam_and_compare(self, dataset, tmp_path):
        for mode in ("baseline", "vegam"):
            assert run(["train", "--mode", mode, "--data", str(dataset), "--out", str(tmp_path / mode)] + FAST) == 0
        assert run(["compare", "--a", str(tmp_path / "baseline" / "eval.csv"),
                    "--b", str(tmp_path / "vegam" / "eval.csv"), "--out", str(tmp_path / "cmp")]) == 0
        header, row = rows(tmp_path / "cmp" / "compare.csv")
        assert header[:3] == ["a", "b", "c"]
        assert sum(int(v) for v in row[:4]) == 6

    def test_compare_identical_is_p_one(self, dataset, tmp_path):
        run(["train", "--data", str(dataset), "--out", str(tmp_path / "r")] + FAST)
        ev = str(tmp_path / "r" / "eval.csv")
        assert run(["compare", "--a", ev, "--b", ev, "--out", str(tmp_path / "c")]) == 0
        row = dict(zip(*rows(tmp_path / "c" / "compare.csv")))
        assert float(row["p_value"]) == 1.0 and row["method"] == "degenerate"

    @pytest.mark.parametrize("variant", ["classical", "modified"])
    def test_cam_on_untrained_model(self, dataset, tmp_path, variant):
        run(["train", "--data", str(dataset), "--out", str(tmp_path / "r"), "--max-epochs", "0"])
        out = tmp_path / "cam"
        assert run(["cam", "--checkpoint", str(tmp_path / "r" / "model.gzcm"), "--data", str(dataset),
                    "--variant", variant, "--limit", "3", "--out", str(out)]) == 0
        table = rows(out / "cams.csv")
        assert len(table) == 4 and table[0][4] == "zero_map"
        sid = table[1][0]
        assert read_pfm(out / "maps" / f"{sid}.cam.pfm").shape == (64, 64)
        assert (out / "maps" / f"{sid}.cam.png").exists()

    def test_eval_analyze_zero_map(self, dataset, tmp_path):
        run(["train", "--data", str(dataset), "--out", str(tmp_path / "r")] + FAST)
        ck = str(tmp_path / "r" / "model.gzcm")
        assert run(["eval", "--checkpoint", ck, "--data", str(dataset), "--out", str(tmp_path / "e")]) == 0
        # same split and model as the training run's own evaluation
        assert (tmp_path / "e" / "eval.csv").read_bytes() == (tmp_path / "r" / "eval.csv").read_bytes()
        assert run(["analyze-weights", "--checkpoint", ck, "--out", str(tmp_path / "w")]) == 0
        assert len(rows(tmp_path / "w" / "histogram.csv")) > 2
        assert run(["zero-map-study", "--checkpoint", ck, "--data", str(dataset), "--trials", "1000",
                    "--out", str(tmp_path / "z")]) == 0
        assert len(rows(tmp_path / "z" / "zero_map.csv")) == 1 + 16

    def test_augment_carries_fixmaps(self, dataset, tmp_path):
        assert run(["augment", "--data", str(dataset), "--copies", "2", "--seed", "1", "--out", str(tmp_path)]) == 0
        ids = [r[0] for r in rows(tmp_path / "manifest.csv")[1:]]
        assert len(ids) == 60
        assert (tmp_path / "images" / f"{ids[0]}.fix.pfm").exists()

    def test_sweep_lambda(self, dataset, tmp_path):
        assert run(["sweep-lambda", "--data", str(dataset), "--lams", "0,1", "--out", str(tmp_path)] + FAST) == 0
        table = rows(tmp_path / "sweep.csv")
        assert [r[0] for r in table[1:]] == ["0.0", "1.0"]

    def test_gaze_to_fixmaps(self, tmp_path):
        dt = 1000 / 120
        trials = {}
        for sid, (x, y) in {"g00_0000:p1": (100, 120), "g00_0000:p2": (110, 130), "g01_0000:p1": (300, 50)}.items():
            trials[sid] = [GazeSample(i * dt, x, y) for i in range(40)]
        write_gaze_csv(tmp_path / "gaze.csv", trials)
        assert run(["fixations", "--gaze", str(tmp_path / "gaze.csv"), "--out", str(tmp_path / "f")]) == 0
        fx = rows(tmp_path / "f" / "fixations.csv")
        assert len(fx) == 4 and float(fx[1][5]) == 1.0
        assert run(["fixmaps", "--fixations", str(tmp_path / "f" / "fixations.csv"), "--out", str(tmp_path / "m")]) == 0
        m = read_pfm(tmp_path / "m" / "images" / "g00_0000.fix.pfm")
        assert m.shape == (400, 400)
        assert m[125, 105] == pytest.approx(m.max(), rel=1e-3)


class TestErrors:
    def test_unknown_subcommand(self, capsys):
        assert run(["bogus"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path):
        assert run(["gen-data", "--out", str(tmp_path), "--nope", "1"]) == 2

    def test_runtime_error_one_line(self, tmp_path, capsys):
        assert run(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("error: train: DataError:")

    def test_bad_gaze_csv(self, tmp_path, capsys):
        (tmp_path / "g.csv").write_text("trial_id,t_ms,x_px,y_px,valid\na,5,1,1,1\na,2,1,1,1\n")
        assert run(["fixations", "--gaze", str(tmp_path / "g.csv"), "--out", str(tmp_path / "o")]) == 1
        assert "line 3" in capsys.readouterr().err

    def test_module_entry_point(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "vegam", "compare", "--out", str(tmp_path)],
                             capture_output=True, text=True)
        assert res.returncode == 2


class TestConfig:
    def test_file_values_and_flag_override(self, dataset, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# training\ndata = {dataset}\nmax_epochs = 1\nbatch-size = 16\nchannels = 4,4,4,8,8,8\n")
        out = tmp_path / "o"
        assert run(["train", "--config", str(cfg), "--max-epochs", "2", "--out", str(out)]) == 0
        snap = dict(line.split(" = ", 1) for line in (out / "config.txt").read_text().splitlines())
        assert snap["max_epochs"] == "2" and snap["batch_size"] == "16"
        assert snap["channels"] == "4,4,4,8,8,8"
        assert len(rows(out / "metrics.csv")) == 1 + 1 + 2

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("data = x\nlearning_rate = 0.1\n")
        assert run(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "unknown config key(s): learning_rate" in capsys.readouterr().err

    def test_bad_choice_in_file(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("data = x\nmode = sometimes\n")
        assert run(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_rerun_is_byte_identical(dataset, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert run(["train", "--mode", "vegam", "--data", str(dataset), "--seed", "3", "--out", str(out)] + FAST) == 0
        outs.append(out)
    for name in ("metrics.csv", "eval.csv", "model.gzcm"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    rec = read_eval(outs[0] / "eval.csv")
    assert np.all((rec.confidence_true > 0) & (rec.confidence_true < 1))
