import json
import subprocess
import sys
import threading

import pytest

from serve_helpers import wait_for
from shelfpipe import ppm
from shelfpipe.cli import build_parser, run
from shelfpipe.serve import BrokerClient, ImageMessage

SUBCOMMANDS = ("generate", "lint", "stats", "predict", "evaluate", "curve", "bench", "serve", "broker")


@pytest.fixture
def dataset_dir(tmp_path):
    assert run(["generate", "--seed", "7", "--n", "10", "--out", str(tmp_path / "d")]) == 0
    return tmp_path / "d"


def test_generate(dataset_dir):
    doc = json.loads((dataset_dir / "dataset.json").read_text())
    assert len(doc["images"]) == 10
    assert all((dataset_dir / im["file"]).exists() for im in doc["images"])


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag():
    assert run(["stats", "--data", "x", "--bogus"]) == 2


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_lists_every_flag(cmd, capsys):
    assert run([cmd, "--help"]) == 0
    out = capsys.readouterr().out
    sub = next(a for a in build_parser()._actions if a.dest == "command").choices[cmd]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in out


def test_predict_then_evaluate(dataset_dir, tmp_path):
    data = str(dataset_dir / "dataset.json")
    preds = str(tmp_path / "p.jsonl")
    assert run(["predict", "--data", data, "--split", "test", "--input-size", "320", "--out", preds]) == 0
    report = tmp_path / "r.json"
    assert run(["evaluate", "--preds", preds, "--data", data, "--split", "test", "--out", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert "maf" in doc and doc["maf"] == 100.0


def test_evaluate_to_stdout(dataset_dir, tmp_path, capsys):
    data = str(dataset_dir / "dataset.json")
    preds = str(tmp_path / "p.jsonl")
    assert run(["predict", "--data", data, "--executor", "color", "--input-size", "320", "--out", preds]) == 0
    capsys.readouterr()
    assert run(["evaluate", "--preds", preds, "--data", data, "--split", "test"]) == 0
    assert json.loads(capsys.readouterr().out)["maf"] >= 99.0


def test_operation_errors_exit_1(dataset_dir, tmp_path):
    data = str(dataset_dir / "dataset.json")
    assert run(["evaluate", "--preds", str(tmp_path / "missing.jsonl"), "--data", data]) == 1
    (tmp_path / "p.jsonl").write_text('{"image_id": "ghost", "boxes": []}\n')
    assert run(["evaluate", "--preds", str(tmp_path / "p.jsonl"), "--data", data]) == 1
    assert run(["generate", "--n", "3", "--splits", "1,1,2", "--out", str(tmp_path / "x")]) == 1


def test_lint_and_stats(dataset_dir, tmp_path, capsys):
    data = str(dataset_dir / "dataset.json")
    assert run(["lint", "--data", data, "--strict"]) == 0
    assert json.loads(capsys.readouterr().out)["errors"] == 0
    assert run(["stats", "--data", data, "--out", str(tmp_path / "st")]) == 0
    assert {p.name for p in (tmp_path / "st").iterdir()} == {"counts.csv", "sizes.csv", "centers.csv"}


def test_curve(tmp_path, capsys):
    for size, v in ((200, 40.0), (100, 30.0)):
        (tmp_path / f"{size}.json").write_text(json.dumps({"map": v, "mar": v, "maf": v}))
    args = ["curve", "--report", f"d0:200:{tmp_path / '200.json'}", "--report", f"d0:100:{tmp_path / '100.json'}"]
    assert run(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["model,train_size,map,mar,maf", "d0,100,30.0000,30.0000,30.0000", "d0,200,40.0000,40.0000,40.0000"]
    assert run(args + ["--report", f"d0:100:{tmp_path / '100.json'}"]) == 1
    assert run(["curve", "--report", "bad"]) == 2


def test_bench_and_compare(tmp_path, capsys):
    for name, cost in (("slow", "4,0.2"), ("fast", "1,0.1")):
        argv = ["bench", "--executor", "simulated", "--cost", cost, "--batch-size", "1", "--batch-size", "4"]
        argv += ["--warmup", "1", "--iters", "5", "--input-size", "64", "--name", name, "--out", str(tmp_path / f"{name}.json")]
        assert run(argv) == 0
    assert run(["bench", "--compare", str(tmp_path / "slow.json"), str(tmp_path / "fast.json"), "--baseline", "slow", "--format", "csv"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[1].startswith("slow,") and rows[2].startswith("fast,")
    assert run(["bench", "--compare", str(tmp_path / "slow.json"), "--baseline", "nope"]) == 1
    assert run(["bench", "--executor", "simulated"]) == 2


def test_config_file_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "generate": {"n": 5, "out": str(tmp_path / "a")}}))
    assert run(["--config", str(cfg), "generate"]) == 0
    assert len(json.loads((tmp_path / "a" / "dataset.json").read_text())["images"]) == 5
    assert run(["--config", str(cfg), "generate", "--n", "4"]) == 0
    assert len(json.loads((tmp_path / "a" / "dataset.json").read_text())["images"]) == 4
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert run(["--config", str(cfg), "generate", "--n", "1", "--out", str(tmp_path / "b")]) == 2


def test_log_level_env(monkeypatch, dataset_dir):
    monkeypatch.setenv("SHELFPIPE_LOG", "loud")
    assert run(["stats", "--data", str(dataset_dir / "dataset.json")]) == 2
    monkeypatch.setenv("SHELFPIPE_LOG", "debug")
    assert run(["stats", "--data", str(dataset_dir / "dataset.json")]) == 0


def test_serve_subcommand(broker, dataset_dir, capsys):
    host, port = broker.address
    result = {}
    argv = ["serve", "--broker", f"{host}:{port}", "--executor", "color", "--input-size", "320", "--duration-s", "1.5"]
    t = threading.Thread(target=lambda: result.setdefault("rc", run(argv)))
    with BrokerClient(host, port) as client:
        client.subscribe("shelf.detections")
        t.start()
        assert wait_for(lambda: broker.subscriber_count("shelf.images") == 1)
        img = ppm.read(dataset_dir / "images" / "img_0000.ppm")
        client.publish("shelf.images", ImageMessage.from_array("img_0000", img).to_dict())
        got = client.recv(timeout=5)
    t.join(10)
    assert result["rc"] == 0
    assert got[1]["image_id"] == "img_0000"


def test_serve_gives_up_without_broker():
    argv = ["serve", "--broker", "127.0.0.1:1", "--executor", "color", "--connect-attempts", "2", "--duration-s", "10"]
    assert run(argv) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "shelfpipe", "broker", "--listen", "127.0.0.1:0", "--duration-s", "0.2"], capture_output=True, text=True, timeout=30)
    assert proc.returncode == 0
    assert "listening" in proc.stdout
