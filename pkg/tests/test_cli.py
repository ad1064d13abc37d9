import shutil
import subprocess
import sys

import pytest

from nncondense.cli import main, parse_config
from nncondense.errors import UsageError
from nncondense.evaluation import reports_from_csv

LSTM_CFG = """
[model]
kind = lstm
[train]
epochs = 1
batch_size = 16
seed = 3
"""

DNN_CFG = """
[model]
kind = dnn
[train]
epochs = 2
batch_size = 16
"""


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n", 120, "--seed", 7, "--out", root / "raw") == 0
    assert run("preprocess", "--episodes", root / "raw/episodes.csv", "--labels", root / "raw/labels.csv",
               "--out", root / "feat") == 0
    (root / "lstm.cfg").write_text(LSTM_CFG)
    (root / "dnn.cfg").write_text(DNN_CFG)
    return root


class TestSynth:
    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run("synth", "--n", 100, "--seed", 7, "--out", tmp_path / d) == 0
        for name in ("episodes.csv", "labels.csv", "manifest.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_zero_samples_is_usage_error(self, tmp_path, capsys):
        assert run("synth", "--n", 0, "--out", tmp_path) == 2
        assert "error[usage]" in capsys.readouterr().err
        assert not list(tmp_path.iterdir())

    def test_manifest_width(self, workspace):
        lines = (workspace / "raw/manifest.csv").read_text().splitlines()
        assert lines[0] == "index,feature"
        assert len(lines) == 77
        assert sum(line.split(",", 1)[1].startswith("mask->") for line in lines[1:]) == 17

    def test_bad_spec_file(self, tmp_path):
        bad = tmp_path / "spec.csv"
        bad.write_text("a,ordinal,,1\n")
        assert run("synth", "--n", 5, "--spec", bad, "--out", tmp_path / "o") == 3


class TestPipeline:
    def test_lstm_train_prune_eval(self, workspace):
        out = workspace / "lstm"
        assert run("train", "--config", workspace / "lstm.cfg", "--data", workspace / "feat/features.cnnf",
                   "--out", out) == 0
        for name in ("model.cnnc", "epochs.csv", "resolved.cfg", "timing.csv"):
            assert (out / name).exists()
        assert len((out / "epochs.csv").read_text().splitlines()) == 2
        assert run("prune", "--model", out / "model.cnnc", "--fraction", 0.5, "--out", workspace / "lstm_p") == 0
        assert (workspace / "lstm_p/prune_report.csv").exists()
        assert run("eval", "--model", out / "model.cnnc", "--model", workspace / "lstm_p/model.cnnc",
                   "--data", workspace / "feat/features.cnnf", "--out", workspace / "ev") == 0
        reports = reports_from_csv((workspace / "ev/eval.csv").read_text())
        assert [r.model for r in reports] == ["lstm", "lstm_p"]
        assert [r.params for r in reports] == [8081, 3273]
        assert reports[1].file_bytes < reports[0].file_bytes

    def test_train_twice_identical(self, workspace):
        for d in ("t1", "t2"):
            assert run("train", "--config", workspace / "lstm.cfg", "--data",
                       workspace / "feat/features.cnnf", "--out", workspace / d) == 0
        for name in ("model.cnnc", "epochs.csv", "resolved.cfg"):
            assert (workspace / "t1" / name).read_bytes() == (workspace / "t2" / name).read_bytes()

    def test_resolved_config_reparses(self, workspace):
        text = (workspace / "t1/resolved.cfg").read_text()
        cfg = parse_config(text)
        assert cfg["model"]["units"] == "16,16"
        assert cfg["train"]["epochs"] == 1

    def test_quantize_dnn_then_eval_and_bench(self, workspace):
        out = workspace / "dnn"
        assert run("train", "--config", workspace / "dnn.cfg", "--data", workspace / "feat/features.cnnf",
                   "--out", out) == 0
        assert run("quantize", "--model", out / "model.cnnc", "--out", out) == 0
        feats = workspace / "feat/features.cnnf"
        assert run("eval", "--model", out / "model.cnnc", "--name", "dnn", "--model", out / "model.q.cnnc",
                   "--name", "dnn_q", "--data", feats, "--out", workspace / "evd") == 0
        assert run("bench", "--model", out / "model.cnnc", "--name", "dnn", "--data", feats,
                   "--repetitions", 3, "--out", workspace / "evd") == 0
        dnn, dnn_q = reports_from_csv((workspace / "evd/eval.csv").read_text())
        assert dnn.params == dnn_q.params == 60929
        assert dnn_q.quantized_bytes < dnn.file_bytes
        assert dnn.inference_us > 0 and dnn_q.inference_us is None
        assert abs(dnn.test_auroc - dnn_q.test_auroc) < 0.05
        assert run("report", "--eval", workspace / "evd/eval.csv", "--epochs", f"dnn={out / 'epochs.csv'}",
                   "--out", workspace / "rep") == 0
        assert (workspace / "rep/report.svg").read_text().startswith("<svg")


class TestExitCodes:
    def test_missing_features_is_data_error(self, workspace, tmp_path, capsys):
        assert run("train", "--config", workspace / "lstm.cfg", "--data", tmp_path / "nope.cnnf",
                   "--out", tmp_path / "o") == 3
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("nncondense: error[")
        assert not (tmp_path / "o").exists()

    def test_corrupt_model_is_format_error(self, workspace, tmp_path, capsys):
        bad = tmp_path / "model.cnnc"
        data = bytearray((workspace / "t1/model.cnnc").read_bytes())
        data[:4] = b"JUNK"
        bad.write_bytes(bytes(data))
        assert run("quantize", "--model", bad, "--out", tmp_path / "q") == 4
        assert "error[bad_magic]" in capsys.readouterr().err
        assert not (tmp_path / "q").exists()

    def test_numeric_blowup_exit_5(self, workspace, tmp_path):
        cfg = tmp_path / "hot.cfg"
        cfg.write_text("[model]\nkind = dnn\n[train]\nepochs = 2\nlearning_rate = 1e30\n")
        assert run("train", "--config", cfg, "--data", workspace / "feat/features.cnnf",
                   "--out", tmp_path / "o") == 5
        assert not (tmp_path / "o" / "model.cnnc").exists()

    def test_unknown_config_key(self, workspace, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[model]\nkind = lstm\nwidth = 3\n")
        assert run("train", "--config", cfg, "--data", workspace / "feat/features.cnnf",
                   "--out", tmp_path / "o") == 2
        with pytest.raises(UsageError, match="unknown config section"):
            parse_config("[extra]\na = 1\n")

    def test_prune_without_prunable_layers(self, workspace, tmp_path):
        cfg = tmp_path / "h.cfg"
        cfg.write_text("[model]\nkind = hlstm\n[train]\nepochs = 1\nbatch_size = 32\n")
        assert run("train", "--config", cfg, "--data", workspace / "feat/features.cnnf", "--out", tmp_path) == 0
        assert run("prune", "--model", tmp_path / "model.cnnc", "--out", tmp_path / "p") == 4

    def test_argparse_usage(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["train"])
        assert info.value.code == 2


@pytest.mark.skipif(shutil.which("nncondense") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["nncondense", "synth", "--n", "3", "--out", str(tmp_path)], capture_output=True)
    assert proc.returncode == 0
    proc = subprocess.run([sys.executable, "-m", "nncondense", "synth", "--n", "1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "error[usage]" in proc.stderr
