import csv
import io
import json
import math

import pytest

from ponderbench.config import ExperimentConfig
from ponderbench.harness import (
    OUT_ENV,
    SUMMARY_COLUMNS,
    emit_metrics,
    export_summary,
    plot_curves,
    read_metrics,
    run_cli,
    run_experiment,
    selftest,
)
from ponderbench.training import MetricsRecord

TINY = ["--hidden", "8", "--batch", "8", "--budget", "6", "--eval-interval", "3", "--eval-batches", "1"]


def rec(step, acc=0.5, diverged=False, loss=0.69):
    return MetricsRecord(step, loss, acc, 2.0, 2.0, diverged)


def test_emit_metrics_lines():
    buf = io.StringIO()
    emit_metrics(rec(1000), buf)
    emit_metrics(rec(2000, diverged=True, loss=math.inf), buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 2
    first, second = (json.loads(x) for x in lines)
    assert set(first) == {"step", "train_loss", "eval_accuracy", "mean_repetitions", "mean_ponder", "diverged"}
    assert first["step"] == 1000 and second["step"] == 2000
    assert second["diverged"] is True and second["train_loss"] is None


def _doc(wrapper, hyper, solved, steps, reps, task="parity", seed=1, rho=None, tau=None, model="RNN"):
    return {"task": task, "wrapper": wrapper, "hyperparameter": hyper, "model": model, "solved": solved,
            "steps_to_solve": steps, "mean_repetitions": reps, "config": {"seed": seed, "rho": rho, "tau": tau}}


def test_export_summary_rows_and_order():
    docs = [
        _doc("act", "tau=0.01", True, 53000, 1.805, tau=0.01, model="ACT-RNN"),
        _doc("repeat", "rho=5", True, 12000, 5.0, rho=5, model="Repeat-RNN"),
        _doc("none", "", False, None, 1.0),
        _doc("act", "tau=0.1", False, None, 1.0, tau=0.1, model="ACT-RNN"),
        _doc("repeat", "rho=2", True, 22000, 2.0, rho=2, model="Repeat-RNN"),
    ]
    rows = list(csv.reader(io.StringIO(export_summary(docs))))
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    body = rows[1:]
    assert [r[2] for r in body] == ["", "rho=2", "rho=5", "tau=0.1", "tau=0.01"]
    assert body[0][3:] == ["no", "", "1.00"]
    assert body[2][3:] == ["yes", "12000", "5.00"]
    assert body[4][5] == "1.805"
    assert export_summary(list(reversed(docs))) == export_summary(docs)


def test_plot_is_deterministic_and_labelled(tmp_path):
    paths = []
    for rho in (1, 2, 3, 5):
        d = tmp_path / f"rho{rho}"
        d.mkdir()
        (d / "config.json").write_text(json.dumps({"wrapper": "repeat", "rho": rho}))
        (d / "metrics.jsonl").write_text("".join(
            json.dumps({"step": s, "eval_accuracy": 0.5 + 0.01 * rho * s / 1000, "mean_ponder": 0.0}) + "\n"
            for s in (1000, 2000, 3000)))
        paths.append(d / "metrics.jsonl")
    a = plot_curves(paths, tmp_path / "a.svg").read_bytes()
    b = plot_curves(paths, tmp_path / "b.svg").read_bytes()
    assert a == b
    text = a.decode()
    for rho in (1, 2, 3, 5):
        assert f"ρ={rho}" in text


def test_plot_needs_input(tmp_path):
    assert run_cli(["plot", str(tmp_path / "empty")]) == 1


def test_run_writes_three_files_and_reproduces(tmp_path):
    args = ["run", "--task", "parity", "--cell", "rnn", "--wrapper", "repeat", "--rho", "2", "--seed", "1", *TINY]
    assert run_cli([*args, "--out", str(tmp_path / "a")]) == 0
    assert run_cli([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("config.json", "metrics.jsonl", "report.json"):
        assert (tmp_path / "a" / name).exists()
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg["rho"] == 2 and cfg["lr"] == 1e-3 and cfg["clip"] == 1.0
    assert [r["step"] for r in read_metrics(tmp_path / "a" / "metrics.jsonl")] == [3, 6]


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert run_cli(["run", "--wrapper", "none", *TINY]) == 0
    assert (tmp_path / "env" / "report.json").exists()


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"wrapper": "repeat", "rho": 3, "hidden": 16, "lr": 0.5}))
    out = tmp_path / "run"
    assert run_cli(["run", "--config", str(cfg_file), "--rho", "4", *TINY, "--out", str(out)]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["rho"] == 4  # flag beats file
    assert cfg["lr"] == 0.5  # file beats default
    assert cfg["hidden"] == 8  # flag beats file
    assert cfg["budget"] == 6


@pytest.mark.parametrize("argv", [
    ["run", "--bogus"],
    ["run", "--wrapper", "repeat"],
    ["run", "--wrapper", "act"],
    ["frobnicate"],
    ["run", "--task", "sorting"],
])
def test_config_errors_exit_one(argv, tmp_path, capsys):
    assert run_cli([*argv, "--out", str(tmp_path)] if argv[0] == "run" else argv) == 1
    assert "usage" in capsys.readouterr().err


def test_diverged_run_exits_two(tmp_path):
    code = run_cli(["run", "--wrapper", "repeat", "--rho", "1", "--lr", "inf", "--no-clip", *TINY,
                    "--out", str(tmp_path)])
    assert code == 2
    rows = read_metrics(tmp_path / "metrics.jsonl")
    assert rows[-1]["diverged"] is True


def test_sweep_tau_grid_and_report(tmp_path):
    root = tmp_path / "sweep"
    code = run_cli(["sweep", "--task", "parity", "--wrapper", "act", "--tau", "1e-1,1e-2,5e-3,1e-3", *TINY,
                    "--out", str(root)])
    assert code == 0
    reports = sorted(root.rglob("report.json"))
    assert len(reports) == 4
    rows = list(csv.DictReader(io.StringIO((root / "summary.csv").read_text())))
    assert [r["hyperparameter"] for r in rows] == ["tau=0.1", "tau=0.01", "tau=0.005", "tau=0.001"]
    assert run_cli(["report", str(root), "--out", str(tmp_path / "s.csv")]) == 0
    assert (tmp_path / "s.csv").read_text() == (root / "summary.csv").read_text()
    assert run_cli(["plot", str(root), "--out", str(tmp_path / "c.svg")]) == 0
    assert "ponder cost" in (tmp_path / "c.svg").read_text()


def test_run_experiment_report_contents(tmp_path):
    cfg = ExperimentConfig(wrapper="repeat", rho=5, hidden=8, batch=8, budget=4, eval_interval=2, eval_batches=1)
    run_experiment(cfg, tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["model"] == "Repeat-RNN" and doc["hyperparameter"] == "rho=5"
    assert doc["mean_repetitions"] == 5.0
    row = list(csv.reader(io.StringIO(export_summary([doc]))))[1]
    assert row[5] == "5.00"


def test_selftest_passes():
    buf = io.StringIO()
    assert selftest(buf)
    assert "FAIL" not in buf.getvalue()
    assert run_cli(["selftest"]) == 0
