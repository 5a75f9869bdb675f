import json
import math
import subprocess
import sys

import numpy as np
import pytest

from hystloop.cli import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, main
from hystloop.signals import ReferenceSpec, generate_reference, write_traces_csv

LINEAR = """
[reference]
shape = sine
frequency_hz = 50
amplitude = 1
periods = 6
samples_per_period = 400

[plant]
kind = linear
gain = 1
time_constant_s = 1e-4

[controller]
Kp = 0.2
Ki = 2000

[loop]
init_cycles = 1
measure_periods = 3
"""

SURROGATE = """
[plant]
kind = linear
[tune]
optimizer = anneal
objective = surrogate
budget = 2000
iters = 2000
cooling = 0.997
[search]
Kp = -1, 1, linear
Ki = -1, 1, linear
[surrogate]
Kp = 0.3
Ki = -0.1
"""


@pytest.fixture
def lin(tmp_path):
    p = tmp_path / "lin.ini"
    p.write_text(LINEAR)
    return p


def test_simulate_writes_artifacts(lin, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(lin), "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["lin_loop.csv", "lin_manifest.json", "lin_traces.csv"]
    assert "FF(vB)=" in capsys.readouterr().out
    manifest = json.loads((out / "lin_manifest.json").read_text())
    assert manifest["tool"] == "hystloop"
    assert manifest["metric_window_samples"] == 1200
    assert manifest["config"]["controller"]["Kp"] == 0.2
    header = (out / "lin_traces.csv").read_text().splitlines()[0]
    assert header == "t,ref,u,vB,B"
    assert (out / "lin_loop.csv").read_text().splitlines()[0] == "u,vB"


def test_ja_loop_csv_has_field_columns(tmp_path):
    cfg = tmp_path / "ja.ini"
    cfg.write_text("[reference]\nfrequency_hz = 5\namplitude = 1.45\nperiods = 3\nsamples_per_period = 200\n"
                   "[plant]\nkind = ja_static\nfield_gain_A_per_m = 4000\n"
                   "[controller]\nKp = 1e-4\nKi = 3000\n[loop]\ninit_cycles = 1\nmeasure_periods = 2\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "ja_loop.csv").read_text().splitlines()[0] == "H,B"


def test_invalid_value_names_the_field(lin, tmp_path, capsys):
    code = main(["simulate", "--config", str(lin), "--out", str(tmp_path), "--override", "reference.frequency_hz=-5"])
    assert code == EXIT_CONFIG
    assert "reference.frequency" in capsys.readouterr().err
    assert not list(tmp_path.glob("*.csv"))


def test_override_reaches_manifest(lin, tmp_path):
    main(["simulate", "--config", str(lin), "--out", str(tmp_path), "--override", "controller.Kp=2.5"])
    manifest = json.loads((tmp_path / "lin_manifest.json").read_text())
    assert manifest["config"]["controller"]["Kp"] == 2.5


def test_divergence_exit_code(lin, tmp_path, capsys):
    code = main(["simulate", "--config", str(lin), "--out", str(tmp_path),
                 "--override", "controller.Kp=50", "--override", "controller.Ki=1"])
    assert code == EXIT_DIVERGENCE
    assert "error" in capsys.readouterr().err


def test_missing_config_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == EXIT_IO


def test_manifest_rerun_reproduces_run(lin, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", str(lin), "--out", str(a)])
    main(["simulate", "--config", str(a / "lin_manifest.json"), "--out", str(b), "--name", "lin"])
    ma = json.loads((a / "lin_manifest.json").read_text())
    mb = json.loads((b / "lin_manifest.json").read_text())
    assert ma["metrics"] == mb["metrics"]
    assert ma["config"] == mb["config"]
    assert (a / "lin_traces.csv").read_bytes() == (b / "lin_traces.csv").read_bytes()


def test_metrics_round_trip(lin, tmp_path, capsys):
    main(["simulate", "--config", str(lin), "--out", str(tmp_path)])
    manifest = json.loads((tmp_path / "lin_manifest.json").read_text())
    capsys.readouterr()
    assert main(["metrics", str(tmp_path / "lin_traces.csv"), "--tail", "1200", "--json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    got = report["columns"]["vB"]["ff_percent"]
    want = manifest["metrics"]["ff_vb_percent"]
    assert f"{got:.6g}" == f"{want:.6g}"
    assert f"{report['rmse_tracking']:.6g}" == f"{manifest['metrics']['rmse_tracking']:.6g}"


def _write_shapes(path):
    t_spec = ReferenceSpec("sine", 50.0, 1.0, 0.0, 1, 4096)
    sine = generate_reference(t_spec)
    square = generate_reference(ReferenceSpec("square", 50.0, 1.0, 0.0, 1, 4096))
    write_traces_csv(path, {"sine": sine, "square": square})


def test_metrics_form_factors(tmp_path, capsys):
    p = tmp_path / "shapes.csv"
    _write_shapes(p)
    assert main(["metrics", str(p), "--json"]) == EXIT_OK
    cols = json.loads(capsys.readouterr().out)["columns"]
    assert abs(cols["sine"]["ff_percent"]) < 1e-4
    assert cols["square"]["ff_percent"] == pytest.approx(100 * (2 * math.sqrt(2) / math.pi - 1), abs=1e-6)
    assert main(["metrics", str(p), "--json", "--ff-theoretical", "square=square"]) == EXIT_OK
    cols = json.loads(capsys.readouterr().out)["columns"]
    assert cols["square"]["ff_percent"] == pytest.approx(0.0, abs=1e-9)
    assert main(["metrics", str(p), "--columns", "sine"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("sine: FF=") and "square" not in out


def test_metrics_missing_column(tmp_path, capsys):
    p = tmp_path / "shapes.csv"
    _write_shapes(p)
    assert main(["metrics", str(p), "--columns", "vB"]) == EXIT_CONFIG
    assert "'vB'" in capsys.readouterr().err


def test_metrics_malformed_csv(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("t,x\n0,1\n0.1,oops\n")
    assert main(["metrics", str(p)]) == EXIT_IO
    assert "line 3" in capsys.readouterr().err
    assert main(["metrics", str(tmp_path / "absent.csv")]) == EXIT_IO


def test_metrics_bad_theoretical_value(tmp_path):
    p = tmp_path / "shapes.csv"
    _write_shapes(p)
    assert main(["metrics", str(p), "--ff-theoretical", "-1"]) == EXIT_CONFIG
    assert main(["metrics", str(p), "--tail", "99999"]) == EXIT_CONFIG


def test_tune_surrogate(tmp_path, capsys):
    cfg = tmp_path / "sur.ini"
    cfg.write_text(SURROGATE)
    assert main(["tune", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("best: ")
    report = json.loads((tmp_path / "sur_tune.json").read_text())
    best = report["best_values"]
    assert math.hypot(best["Kp"] - 0.3, best["Ki"] + 0.1) < 1e-2
    assert report["evaluations"] <= 2000
    rows = (tmp_path / "sur_tune_history.csv").read_text().splitlines()
    assert rows[0] == "index,Kp,Ki,score"
    assert len(rows) == report["evaluations"] + 1


def test_tune_is_reproducible(tmp_path):
    cfg = tmp_path / "sur.ini"
    cfg.write_text(SURROGATE)
    reports = []
    for d in ("a", "b"):
        main(["tune", "--config", str(cfg), "--out", str(tmp_path / d)])
        r = json.loads((tmp_path / d / "sur_tune.json").read_text())
        r.pop("timestamp")
        reports.append(r)
    assert reports[0] == reports[1]
    assert (tmp_path / "a" / "sur_tune_history.csv").read_bytes() == (tmp_path / "b" / "sur_tune_history.csv").read_bytes()


def test_tune_grid_over_budget(tmp_path, capsys):
    cfg = tmp_path / "g.ini"
    cfg.write_text("[plant]\nkind = linear\n[tune]\noptimizer = grid\npoints_per_dim = 50\nbudget = 100\n"
                   "[search]\nKp = 0.1, 1\nKi = 1, 10\n")
    assert main(["tune", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "budget" in capsys.readouterr().err
    assert not (tmp_path / "g_tune.json").exists()


def test_tune_without_section(lin, tmp_path):
    assert main(["tune", "--config", str(lin), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_module_entry_point(lin, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hystloop", "simulate", "--config", str(lin), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("FF(vB)=")
    proc = subprocess.run([sys.executable, "-m", "hystloop", "--version"], capture_output=True, text=True)
    assert proc.stdout.strip() == "hystloop 0.1.0"


def test_exported_traces_are_finite(lin, tmp_path):
    main(["simulate", "--config", str(lin), "--out", str(tmp_path)])
    data = np.loadtxt(tmp_path / "lin_traces.csv", delimiter=",", skiprows=1)
    assert data.shape == (2400, 5)
    assert np.all(np.isfinite(data))
