import csv
import subprocess
import sys

import pytest

from shipmpc.artifacts import DISPATCH_COLUMNS
from shipmpc.cli import OUTPUT_ENV, main
from shipmpc.sim import TRACE_COLUMNS

SHORT = ["--set", "horizon_h=10", "--set", "duration=10", "--set", "sim_dt=1e-3"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_dispatch_reference(tmp_path, capsys):
    assert main(["dispatch", "-o", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "audit             PASS" in out and "sum p_batt" in out
    rows = read_csv(tmp_path / "dispatch.csv")
    assert tuple(rows[0]) == DISPATCH_COLUMNS
    assert len(rows) == 101
    assert abs(sum(float(r[3]) for r in rows[1:])) <= 1e-6 * 20e6


def test_dispatch_infeasible_parking(tmp_path, capsys):
    assert main(["dispatch", "-o", str(tmp_path), "--set", "soc_final=0.0"]) == 1
    err = capsys.readouterr().err
    assert "Infeasible" in err and "violation" in err
    assert not (tmp_path / "dispatch.csv").exists()


def test_dispatch_single_step(tmp_path):
    assert main(["dispatch", "-o", str(tmp_path), "--set", "horizon_h=1",
                 "--set", "soc_initial=0.5", "--set", "soc_final=0.5"]) == 0
    assert len(read_csv(tmp_path / "dispatch.csv")) == 2


@pytest.mark.parametrize("argv", [
    ["dispatch", "--set", "bogus=1"],
    ["dispatch", "--set", "mpc.soc_final=2"],
    ["dispatch", "-c", "/nonexistent/scenario.yaml"],
    ["sweep", "--lambdas", "1e12"],
    ["sweep", "--lambdas", "a,b"],
    ["validate", "--dt", "-1"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["-o", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_yaml_error_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("mpc:\n  horizon_h: 10\n  unknown_knob: 1\n")
    assert main(["dispatch", "-c", str(path), "-o", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_print_config_round_trips(capsys, tmp_path):
    assert main(["dispatch", "--print-config", "--set", "soc_final=0.7"]) == 0
    text = capsys.readouterr().out
    path = tmp_path / "dumped.yaml"
    path.write_text(text)
    assert main(["dispatch", "--print-config", "-c", str(path)]) == 0
    assert capsys.readouterr().out == text


def test_simulate_writes_artifacts_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a" / "nested", tmp_path / "b"
    assert main(["simulate", "-o", str(a), *SHORT]) == 0
    assert main(["simulate", "-o", str(b), *SHORT]) == 0
    for name in ("trace.csv", "dispatch.csv", "metrics.txt", "metrics.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = read_csv(a / "trace.csv")
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 1 + 10001  # header + N + 1 samples
    v_ceq = rows[5][TRACE_COLUMNS.index("v_ceq")]
    digits = v_ceq.split("e")[0].replace(".", "").replace("-", "").lstrip("0")
    assert len(digits) >= 12


def test_simulate_trace_every(tmp_path):
    assert main(["simulate", "-o", str(tmp_path), "--trace-every", "100", *SHORT]) == 0
    assert len(read_csv(tmp_path / "trace.csv")) == 1 + 101


def test_output_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["dispatch", *SHORT]) == 0
    assert (target / "dispatch.csv").exists()


def test_seed_changes_noisy_forecast(tmp_path):
    noisy = [*SHORT, "--set", "forecast_mode=noisy", "--set", "forecast_sigma=1e6"]
    for seed, sub in ((1, "s1"), (1, "s1b"), (2, "s2")):
        assert main(["dispatch", "-o", str(tmp_path / sub), "--seed", str(seed), *noisy]) == 0
    s1 = (tmp_path / "s1" / "dispatch.csv").read_bytes()
    assert s1 == (tmp_path / "s1b" / "dispatch.csv").read_bytes()
    assert s1 != (tmp_path / "s2" / "dispatch.csv").read_bytes()


def test_sweep_dispatch_only(tmp_path, capsys):
    assert main(["sweep", "-o", str(tmp_path), "--dispatch-only",
                 "--lambdas", "1e13,0,1e12"]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0][0] == "lambda"
    assert [float(r[0]) for r in rows[1:]] == [0.0, 1e12, 1e13]
    assert "ok" in capsys.readouterr().out


def test_sweep_row_errors_exit_1(tmp_path):
    assert main(["sweep", "-o", str(tmp_path), "--dispatch-only", "--lambdas", "0,1",
                 "--set", "soc_final=0"]) == 1
    assert (tmp_path / "sweep.csv").exists()


def test_validate_passes_and_detects_faults(tmp_path, capsys):
    assert main(["validate", "-o", str(tmp_path), "--qp-count", "20"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out and "FAIL" not in out
    assert main(["validate", "-o", str(tmp_path), "--qp-count", "5",
                 "--perturb-h", "1e-3"]) == 1
    assert main(["validate", "-o", str(tmp_path), "--qp-count", "5", "--dt", "5e-3"]) == 1


def test_help_lists_flags():
    out = subprocess.run([sys.executable, "-m", "shipmpc.cli", "simulate", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for flag in ("--config", "--output-dir", "--set", "--seed", "--trace-every"):
        assert flag in out
