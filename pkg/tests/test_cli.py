import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from mdlab.cli import main
from mdlab.dataset import load_dataset, read_header
from mdlab.imaging import read_pgm
from mdlab.metrics import PER_SAMPLE_COLUMNS, TABLE_COLUMNS


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _config(capsys):
    err = capsys.readouterr().err
    return json.loads(err.strip().splitlines()[0])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    for name, n, seed, ch in (("n4", 40, 3, "n4"), ("n3", 6, 5, "n3"), ("n7", 6, 7, "n7"),
                              ("toy", 200, 11, "n4")):
        assert main(["gen", "--n", str(n), "--seed", str(seed), "--channels", ch,
                     "--out", str(d / f"{name}.mdl")]) == 0
    return d


class TestModes:
    def test_files(self, tmp_path, capsys):
        assert main(["modes", "--out", str(tmp_path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["v"] == pytest.approx(7.3817, abs=1e-3)
        pgms = sorted(tmp_path.glob("*.pgm"))
        assert len(pgms) == 28
        te, maxval = read_pgm(tmp_path / "TE01_lp0.pgm")
        assert te.shape == (121, 121)
        assert np.all(te[60] == 0) and te.max() == maxval == 255
        info = json.loads((tmp_path / "modes.json").read_text())
        assert {"u", "w", "v"} <= set(info)

    def test_custom_fiber(self, tmp_path, capsys):
        assert main(["modes", "--out", str(tmp_path), "--fiber", "12.5,0.12,1.064"]) == 0
        v = json.loads(capsys.readouterr().out)["v"]
        assert v == pytest.approx(2 * np.pi * 12.5 * 0.12 / 1.064)

    def test_bad_fiber_is_usage_error(self, tmp_path):
        assert main(["modes", "--out", str(tmp_path), "--fiber", "12.5,x"]) == 2


class TestGen:
    def test_header_channels(self, data_dir):
        h, _ = read_header(data_dir / "n4.mdl")
        assert [c.value for c in h.channels] == ["LP0", "LP45", "LP90", "RHCP"]
        assert load_dataset(data_dir / "n7.mdl").images.shape[-1] == 7

    def test_byte_identical(self, data_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("MDLAB_THREADS", "2")
        assert main(["gen", "--n", "40", "--seed", "3", "--channels", "n4",
                     "--out", str(tmp_path / "again.mdl")]) == 0
        assert (tmp_path / "again.mdl").read_bytes() == (data_dir / "n4.mdl").read_bytes()

    def test_config_on_stderr(self, tmp_path, capsys):
        assert main(["gen", "--n", "4", "--out", str(tmp_path / "x.mdl")]) == 0
        cfg = _config(capsys)
        assert cfg["seed"] == 0 and cfg["channels"] == "n4" and cfg["threads"] >= 1

    def test_bad_threads(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MDLAB_THREADS", "0")
        assert main(["gen", "--n", "4", "--out", str(tmp_path / "x.mdl")]) == 3


class TestTrainEval:
    @pytest.fixture(scope="class")
    @staticmethod
    def trained(data_dir):
        model = data_dir / "toy.model"
        assert main(["train", "--data", str(data_dir / "toy.mdl"), "--val",
                     str(data_dir / "n4.mdl"), "--epochs", "30", "--seed", "2",
                     "--out", str(model)]) == 0
        return model

    def test_history(self, trained):
        rows = _csv(f"{trained}.history.csv")
        assert len(rows) == 30
        assert list(rows[0]) == ["epoch", "train_rms", "val_rms"]
        assert float(rows[-1]["train_rms"]) < float(rows[0]["train_rms"])

    def test_eval(self, trained, data_dir, tmp_path, capsys):
        capsys.readouterr()
        assert main(["eval", "--model", str(trained), "--data", str(data_dir / "n4.mdl"),
                     "--out", str(tmp_path / "r.csv"), "--per-sample",
                     str(tmp_path / "p.csv")]) == 0
        rows = _csv(tmp_path / "r.csv")
        assert len(rows) == 1 and list(rows[0]) == list(TABLE_COLUMNS)
        per = _csv(tmp_path / "p.csv")
        assert len(per) == 40 and list(per[0]) == list(PER_SAMPLE_COLUMNS)
        lines = capsys.readouterr().out.splitlines()
        assert [ln.split()[0] for ln in lines] == ["q1", "median", "q3"]
        maes = sorted(float(r["label_mae"]) for r in per)
        got = [float(ln.split("label_mae=")[1]) for ln in lines]
        assert got == pytest.approx([maes[9], maes[19], maes[29]], rel=1e-5)

    def test_eval_channel_mismatch(self, trained, data_dir, tmp_path):
        assert main(["eval", "--model", str(trained), "--data", str(data_dir / "n3.mdl"),
                     "--out", str(tmp_path / "r.csv")]) == 3

    def test_val_mismatch_before_training(self, data_dir, tmp_path, capsys):
        out = tmp_path / "m.model"
        assert main(["train", "--data", str(data_dir / "n4.mdl"), "--val",
                     str(data_dir / "n3.mdl"), "--epochs", "1", "--out", str(out)]) == 3
        assert not out.exists()
        assert "differ" in capsys.readouterr().err

    def test_train_config_has_seeds(self, data_dir, tmp_path, capsys):
        assert main(["train", "--data", str(data_dir / "n7.mdl"), "--epochs", "1",
                     "--seed", "9", "--out", str(tmp_path / "m.model")]) == 0
        cfg = _config(capsys)
        assert cfg["seed"] == 9 and cfg["init_seed"] == 9 and cfg["batch"] == 128
        assert cfg["lr"] == 1e-3


class TestBaseline:
    def test_n7(self, data_dir, tmp_path):
        assert main(["baseline", "--data", str(data_dir / "n7.mdl"), "--channels", "n7",
                     "--out", str(tmp_path / "b.csv"), "--limit", "3"]) == 0
        row = _csv(tmp_path / "b.csv")[0]
        assert float(row["label_rms"]) < 1e-6
        assert set(TABLE_COLUMNS) < set(row) and "ambiguity_count" in row

    def test_n3_ambiguity(self, data_dir, tmp_path):
        assert main(["baseline", "--data", str(data_dir / "n3.mdl"),
                     "--out", str(tmp_path / "b.csv"), "--limit", "2"]) == 0
        assert int(_csv(tmp_path / "b.csv")[0]["ambiguity_count"]) > 0

    def test_channel_mismatch(self, data_dir, tmp_path):
        assert main(["baseline", "--data", str(data_dir / "n3.mdl"), "--channels", "n4",
                     "--out", str(tmp_path / "b.csv")]) == 3


class TestDemoAmbiguity:
    def test_outputs(self, tmp_path):
        assert main(["demo-ambiguity", "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("*.pgm"))) == 14
        checks = json.loads((tmp_path / "ambiguity.json").read_text())
        assert checks["lp_max_abs_diff"] < 1e-12
        assert checks["rhcp_plus_vs_lhcp_minus"] < 1e-12
        assert checks["lp_identical"] and checks["cp_swapped"]


class TestReport:
    def test_compare(self, tmp_path):
        for name, v in (("a", 0.2), ("b", 0.1)):
            with open(tmp_path / f"{name}.csv", "w") as fh:
                fh.write(",".join(TABLE_COLUMNS) + "\n" + ",".join([str(v)] * 7) + "\n")
        assert main(["report", f"a={tmp_path / 'a.csv'}", f"b={tmp_path / 'b.csv'}",
                     "--compare", "a,b", "--out", str(tmp_path / "t.csv")]) == 0
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[-1].startswith("a vs b (%),100.00")

    def test_unknown_compare(self, tmp_path):
        with open(tmp_path / "a.csv", "w") as fh:
            fh.write(",".join(TABLE_COLUMNS) + "\n" + ",".join(["0.1"] * 7) + "\n")
        assert main(["report", f"a={tmp_path / 'a.csv'}", "--compare", "a,z",
                     "--out", str(tmp_path / "t.csv")]) == 3


class TestExitCodes:
    def test_unknown_flag(self, tmp_path):
        assert main(["modes", "--out", str(tmp_path), "--bogus"]) == 2

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["eval", "--model", str(tmp_path / "no.model"), "--data",
                     str(tmp_path / "no.mdl"), "--out", str(tmp_path / "r.csv")]) == 3

    def test_console_script(self, tmp_path):
        exe = shutil.which("mdlab")
        cmd = [exe] if exe else [sys.executable, "-m", "mdlab.cli"]
        proc = subprocess.run(cmd + ["gen", "--n", "2", "--out", str(tmp_path / "s.mdl"),
                                     "--seed", "1"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert json.loads(proc.stderr.splitlines()[0])["seed"] == 1
        bad = subprocess.run(cmd + ["gen", "--n", "-1", "--out", "x"], capture_output=True)
        assert bad.returncode == 2
