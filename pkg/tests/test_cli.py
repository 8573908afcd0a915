import csv
import subprocess
import sys

import numpy as np
import pytest

from pcnn.cli import EXIT_CODES, run
from pcnn.data import write_idx


@pytest.fixture
def tiny_mnist(tmp_path):
    rng = np.random.default_rng(0)
    root = tmp_path / "mnist"
    root.mkdir()
    for split, n in (("train", 60), ("t10k", 20)):
        write_idx(root / f"{split}-images-idx3-ubyte", rng.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx(root / f"{split}-labels-idx1-ubyte", rng.integers(0, 10, n, dtype=np.uint8))
    return root


def _cfg(tmp_path, **extra):
    p = tmp_path / "c.cfg"
    lines = ["width=4", "epochs=2", "batch_size=20"] + [f"{k}={v}" for k, v in extra.items()]
    p.write_text("\n".join(lines) + "\n")
    return p


def test_unknown_flag_exits_2(capsys):
    assert run(["train", "--bogus"]) == 2
    assert "usage:" in capsys.readouterr().err
    assert EXIT_CODES["usage"] == 2


def test_missing_dataset_exits_3(tmp_path, capsys):
    code = run(["train", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "r")])
    assert code == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: dataset_missing:")


def test_train_export_eval_histogram(tmp_path, tiny_mnist, capsys):
    out = tmp_path / "run1"
    cfg = _cfg(tmp_path)
    assert run(["train", "--config", str(cfg), "--data", str(tiny_mnist), "--out", str(out),
                "--deterministic", "--seed", "3", "--lambda", "0.001"]) == 0
    assert (out / "metrics.csv").exists() and (out / "checkpoint_epoch001.pcnn").exists()
    assert "lambda=0.001" in (out / "config.cfg").read_text()
    assert "seed=3" in (out / "config.cfg").read_text()

    assert run(["export", "--checkpoint", str(out / "checkpoint_epoch001.pcnn"), "--out", str(tmp_path / "exp")]) == 0
    assert (tmp_path / "exp" / "model.pcnn").read_bytes() == (out / "model.pcnn").read_bytes()

    for engine in ("float", "xnor"):
        assert run(["eval", "--model", str(out / "model.pcnn"), "--data", str(tiny_mnist), "--engine", engine,
                    "--out", str(tmp_path / f"ev_{engine}")]) == 0
    assert run(["histogram", "--checkpoint", str(out / "checkpoint_epoch001.pcnn"), "--out", str(tmp_path / "h"),
                "--bins", "12"]) == 0
    assert len((tmp_path / "h" / "histogram.csv").read_text().splitlines()) == 13


def test_deterministic_runs_identical(tmp_path, tiny_mnist):
    cfg = _cfg(tmp_path)
    for name in ("a", "b"):
        assert run(["train", "--config", str(cfg), "--data", str(tiny_mnist), "--out", str(tmp_path / name),
                    "--deterministic", "--seed", "7"]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "model.pcnn").read_bytes() == (tmp_path / "b" / "model.pcnn").read_bytes()


def test_analyze_memory_table(tmp_path, capsys):
    assert run(["analyze-memory", "--arch", "resnet18-like", "--J", "1", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "Memory usage" in text and "Memory saving" in text and "374.1 Mbit" in text
    rows = list(csv.DictReader(open(tmp_path / "memory.csv")))
    assert rows[0]["layer"] == "conv1"
    assert run(["analyze-memory", "--arch", "small-cnn"]) == 0


def test_bench_csv(tmp_path, tiny_mnist, capsys):
    cfg = _cfg(tmp_path, epochs=1)
    assert run(["train", "--config", str(cfg), "--data", str(tiny_mnist), "--out", str(tmp_path / "r")]) == 0
    capsys.readouterr()
    assert run(["bench", "--model", str(tmp_path / "r" / "model.pcnn"), "--out", str(tmp_path / "b"),
                "--repeats", "1", "--batch", "2"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "b" / "bench.csv")))
    assert {r["engine"] for r in rows} == {"float", "xnor"}
    assert {r["layer"] for r in rows} == {"conv2", "conv3"}
    assert all(float(r["ops_per_sec"]) > 0 for r in rows)


def test_corrupt_model_is_format_error(tmp_path, capsys):
    (tmp_path / "bad.pcnn").write_bytes(b"garbage" * 4)
    assert run(["eval", "--model", str(tmp_path / "bad.pcnn"), "--data", str(tmp_path)]) == EXIT_CODES["format"]
    assert capsys.readouterr().err.startswith("error: format:")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pcnn", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "analyze-memory" in res.stdout


def test_thread_env_validation(monkeypatch, tmp_path):
    monkeypatch.setenv("PCNN_THREADS", "lots")
    assert run(["bench", "--repeats", "1", "--out", str(tmp_path)]) == 2
