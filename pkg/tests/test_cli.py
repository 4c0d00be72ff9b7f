"""End-to-end runs of the command-line entry point."""

import csv

import numpy as np
import pytest

from chbcontrol.cli import main


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    return rows[0], rows[1:]


def test_steady_zero_forcing(tmp_path):
    out = tmp_path / "run"
    rc = main(["steady", "--out", str(out),
               "--override", "problem.forcing=zero"])
    assert rc == 0
    header, rows = read_rows(out / "steady.csv")
    assert header == ["x", "ubar", "ubar_x", "forcing"]
    assert len(rows) == 65
    assert all(float(r[1]) == 0.0 for r in rows)
    text = (out / "manifest.txt").read_text(encoding="utf-8")
    assert "command = steady" in text
    assert "seed = 0" in text
    assert "[versions]" in text
    assert (out / "steady.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_simulate_reports_mass_drift(tmp_path):
    out = tmp_path / "run"
    rc = main(["simulate", "--out", str(out),
               "--override", "time.horizon=0.2",
               "--override", "problem.forcing=zero"])
    assert rc == 0
    header, rows = read_rows(out / "evolution.csv")
    assert header == ["t", "w_norm", "psi_norm", "total_norm", "psi_mass"]
    assert len(rows) == 201
    masses = np.array([float(r[4]) for r in rows])
    assert np.max(np.abs(masses - masses[0])) < 1e-12
    text = (out / "manifest.txt").read_text(encoding="utf-8")
    assert "[outcome]" in text
    assert "mass_drift = " in text


def test_control_outputs_and_determinism(tmp_path):
    args = ["--override", "time.horizon=0.2",
            "--override", "hum.epsilon=1e-4"]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["control", "--out", str(out1)] + args) == 0
    assert main(["control", "--out", str(out2)] + args) == 0
    header, rows = read_rows(out1 / "summary.csv")
    summary = dict(zip(header, rows[0]))
    assert float(summary["terminal_norm"]) < float(summary["free_terminal_norm"])
    assert float(summary["cg_residual"]) <= 1e-8
    for name in ("summary.csv", "state_norms.csv", "control_profile.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_carleman_probe_run_and_seed_flag(tmp_path):
    out = tmp_path / "run"
    rc = main(["carleman", "--out", str(out), "--seed", "7",
               "--override", "time.horizon=0.25",
               "--override", "carleman.n_samples=2"])
    assert rc == 0
    assert "seed = 7" in (out / "manifest.txt").read_text(encoding="utf-8")
    _, rows = read_rows(out / "probe.csv")
    assert len(rows) == 2
    _, nurows = read_rows(out / "nu.csv")
    assert len(nurows) == 65
    header, srows = read_rows(out / "summary.csv")
    summary = dict(zip(header, srows[0]))
    assert np.isfinite(float(summary["max_log_ratio"]))
    assert float(summary["derivative_bound_constant"]) > 0.0


def test_source_term_run(tmp_path):
    out = tmp_path / "run"
    rc = main(["source-term", "--out", str(out),
               "--override", "time.horizon=0.5"])
    assert rc == 0
    header, srows = read_rows(out / "summary.csv")
    summary = dict(zip(header, srows[0]))
    n_intervals = int(summary["n_intervals"])
    assert n_intervals >= 1
    assert float(summary["max_jump"]) < 1e-8
    _, irows = read_rows(out / "intervals.csv")
    assert len(irows) == n_intervals
    _, wrows = read_rows(out / "weights.csv")
    assert len(wrows) == 1001


def test_nonlinear_run(tmp_path):
    out = tmp_path / "run"
    rc = main(["nonlinear", "--out", str(out),
               "--override", "time.horizon=0.5",
               "--override", "nonlinear.amplitude=1e-3"])
    assert rc == 0
    header, srows = read_rows(out / "summary.csv")
    summary = dict(zip(header, srows[0]))
    assert summary["converged"] == "true"
    assert float(summary["closed_loop_terminal"]) < 1e-6
    _, irows = read_rows(out / "iterations.csv")
    assert len(irows) == int(summary["iterations"])


def test_sweep_run(tmp_path):
    out = tmp_path / "run"
    rc = main(["sweep", "--out", str(out),
               "--override", "sweep.t_values=0.25,0.125",
               "--override", "sweep.epsilon=1e-4"])
    assert rc == 0
    _, rows = read_rows(out / "sweep.csv")
    assert len(rows) == 2
    costs = [float(r[2]) for r in rows]
    assert costs[1] > costs[0]
    header, srows = read_rows(out / "summary.csv")
    summary = dict(zip(header, srows[0]))
    assert summary["cost_increases_as_T_shrinks"] == "true"
    assert np.isfinite(float(summary["fitted_M"]))


def test_inadmissible_schedule_exits_nonzero(tmp_path, capsys):
    rc = main(["source-term", "--out", str(tmp_path / "run"),
               "--override", "source_term.q=1.2"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "error:" in err
    assert "2^(1/(2m))" in err


def test_unknown_override_exits_nonzero(tmp_path, capsys):
    rc = main(["steady", "--out", str(tmp_path / "run"),
               "--override", "problem.bogus=1"])
    assert rc == 2
    assert "unknown configuration keys" in capsys.readouterr().err


def test_malformed_override_exits_nonzero(tmp_path, capsys):
    rc = main(["steady", "--out", str(tmp_path / "run"),
               "--override", "problemn64"])
    assert rc == 2
    assert "not of the form" in capsys.readouterr().err


def test_horizon_step_mismatch_exits_nonzero(tmp_path, capsys):
    rc = main(["simulate", "--out", str(tmp_path / "run"),
               "--override", "time.horizon=0.2005"])
    assert rc == 2
    assert "not a multiple" in capsys.readouterr().err


def test_unknown_subcommand_is_a_usage_error(capsys):
    with pytest.raises(SystemExit):
        main(["bogus"])
