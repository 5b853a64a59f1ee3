import io
import json
import pytest
import pandas as pd
from unittest.mock import patch

from app.cli import (
    EXIT_FAILED_CHECK,
    EXIT_INVALID,
    EXIT_NUMERICAL,
    EXIT_OK,
    build_parser,
    main,
    merge_config,
)
from app.exceptions import ConvergenceError, OperationError
from app.exports import BATCH_COLUMNS, metadata_path, read_kernel

SIMULATE = ["simulate", "--protocol", "kmaj:3", "--n", "100", "--runs", "5", "--x0", "60", "--seed", "7"]


def read_stdout_csv(text, sep=","):
    return pd.read_csv(io.StringIO(text), sep=sep)


# Test cases for simulate

def test_simulate_is_deterministic(capsys):
    assert main(SIMULATE) == EXIT_OK
    first = capsys.readouterr()
    assert main(SIMULATE) == EXIT_OK
    second = capsys.readouterr()
    assert first.out == second.out
    frame = read_stdout_csv(first.out)
    assert list(frame.columns) == BATCH_COLUMNS
    assert frame["run_index"].tolist() == [0, 1, 2, 3, 4]
    assert set(frame["seed"]) == {7}
    assert "5 runs:" in first.err

def test_simulate_writes_side_outputs(tmp_path, capsys):
    out, trajectories, cdf = tmp_path / "batch.csv", tmp_path / "traj.csv", tmp_path / "cdf.csv"
    argv = SIMULATE + ["--out", str(out), "--trajectories", str(trajectories), "--cdf-out", str(cdf)]
    assert main(argv) == EXIT_OK
    assert capsys.readouterr().out == ""
    batch = pd.read_csv(out)
    traj = pd.read_csv(trajectories)
    assert len(batch) == 5
    assert len(traj) == int((batch["runtime"] + 1).sum())
    assert list(pd.read_csv(cdf).columns) == ["s", "P_R_geq_s"]
    meta = json.loads(metadata_path(cdf).read_text(encoding="utf-8"))
    assert meta == {"protocol": {"kind": "kmaj", "k": 3}, "n": 100, "x0": 60}

def test_simulate_with_bias_and_hex_seed(capsys):
    argv = ["simulate", "--protocol", "kmaj:3", "--n", "100", "--runs", "2", "--d", "0.5", "--seed", "0x10"]
    assert main(argv) == EXIT_OK
    frame = read_stdout_csv(capsys.readouterr().out)
    assert set(frame["x0"]) == {55}
    assert set(frame["seed"]) == {16}

@pytest.mark.parametrize("extra, message", [
    (["--d", "0.5"], "--d and --x0 are mutually exclusive"),
    (["--adversary", "sideways:pow0.3"], "Unknown adversary direction"),
    (["--protocol", "kmaj:5"], "takes exactly one --protocol, got 2"),
    (["--seed", "-1"], "seed must fit in 64 unsigned bits"),
])
def test_simulate_rejects_invalid_input(capsys, extra, message):
    assert main(SIMULATE + extra) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "error: ValidationError: " in err
    assert message in err

def test_simulate_requires_size(capsys):
    assert main(["simulate", "--protocol", "kmaj:3", "--runs", "3"]) == EXIT_INVALID
    assert "simulate needs --n" in capsys.readouterr().err

def test_argparse_errors_are_invalid_input(capsys):
    assert main(["simulate", "--n", "ten"]) == EXIT_INVALID
    assert main(["sideways"]) == EXIT_INVALID

def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "simulate" in capsys.readouterr().out

# Test cases for theory

def test_theory_f_grid_for_several_protocols(capsys):
    argv = ["theory", "--emit-f-grid", "--protocol", "kmaj:3", "--protocol", "kmaj:5", "--points", "5"]
    assert main(argv) == EXIT_OK
    frame = read_stdout_csv(capsys.readouterr().out, sep=" ")
    assert list(frame.columns) == ["x", "kmaj:3", "kmaj:5"]
    assert frame["x"].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert frame["kmaj:3"].iloc[2] == pytest.approx(0.5)

def test_theory_axioms_pass(capsys):
    assert main(["theory", "--emit-axioms", "--protocol", "kmaj:3"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True

def test_theory_axioms_fail_for_voter_model(capsys):
    assert main(["theory", "--emit-axioms", "--protocol", "poly:0,1"]) == EXIT_FAILED_CHECK
    assert json.loads(capsys.readouterr().out)["passed"] is False

def test_theory_z_density(capsys):
    assert main(["theory", "--emit-z-density", "--protocol", "kmaj:3", "--d", "0"]) == EXIT_OK
    frame = read_stdout_csv(capsys.readouterr().out, sep=" ")
    assert list(frame.columns) == ["w", "density"]

def test_theory_z_density_requires_bias(capsys):
    assert main(["theory", "--emit-z-density", "--protocol", "kmaj:3"]) == EXIT_INVALID
    assert "theory needs --d" in capsys.readouterr().err

def test_theory_needs_exactly_one_mode(capsys):
    assert main(["theory", "--emit-g", "--emit-axioms", "--protocol", "kmaj:3"]) == EXIT_INVALID
    assert main(["theory", "--protocol", "kmaj:3"]) == EXIT_INVALID

def test_theory_g_writes_offsets_and_sidecar(tmp_path, capsys):
    out = tmp_path / "g.dat"
    assert main(["theory", "--emit-g", "--protocol", "kmaj:3", "--grid-size", "64", "--out", str(out)]) == EXIT_OK
    frame = pd.read_csv(out, sep=" ")
    assert list(frame.columns) == ["x", "g"]
    assert frame["g"].iloc[0] == 0.0
    meta = json.loads(metadata_path(out).read_text(encoding="utf-8"))
    assert abs(meta["g0"] + 0.956474) < 1e-5
    assert meta["grid_size"] == 64
    assert "g(0) = " in capsys.readouterr().err

def test_theory_runtime_cdf(tmp_path):
    out = tmp_path / "cdf.csv"
    argv = ["theory", "--emit-runtime-cdf", "--protocol", "kmaj:3", "--n", "1000000", "--d", "0",
            "--grid-size", "64", "--out", str(out)]
    assert main(argv) == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["s", "P_R_geq_s"]
    assert frame["P_R_geq_s"].is_monotonic_decreasing
    meta = json.loads(metadata_path(out).read_text(encoding="utf-8"))
    assert meta["n"] == 1000000
    assert meta["win_probability"] == 0.5
    assert {"g0", "a_used", "b_used", "tol", "mean_runtime"} <= set(meta)

def test_theory_convergence_failure_exits_numerical(capsys):
    error = ConvergenceError("g for kmaj:3 did not converge", a_used=8, b_used=40)
    with patch("app.cli.build_g_approx", side_effect=error):
        assert main(["theory", "--emit-g", "--protocol", "kmaj:3"]) == EXIT_NUMERICAL
    err = capsys.readouterr().err
    assert "error: ConvergenceError: g for kmaj:3 did not converge [a_used=8 b_used=40]" in err

# Test cases for oracle

def test_oracle_runtime_table(capsys):
    assert main(["oracle", "--protocol", "kmaj:3", "--n", "2", "--x0", "1"]) == EXIT_OK
    frame = read_stdout_csv(capsys.readouterr().out)
    survival = dict(zip(frame["s"], frame["P_R_geq_s"]))
    assert survival[1] == 1.0
    assert survival[2] == pytest.approx(0.5)
    assert survival[3] == pytest.approx(0.25)

def test_oracle_sidecar_and_kernel(tmp_path, capsys):
    out, kernel = tmp_path / "exact.csv", tmp_path / "kernel.bin"
    argv = ["oracle", "--protocol", "kmaj:3", "--n", "20", "--x0", "12", "--t-max", "30",
            "--linear", "--out", str(out), "--kernel-out", str(kernel)]
    assert main(argv) == EXIT_OK
    meta = json.loads(metadata_path(out).read_text(encoding="utf-8"))
    assert meta["n"] == 20
    assert meta["x0"] == 12
    assert 0.5 < meta["win_probability"] < 1.0
    assert len(pd.read_csv(out)) == 31
    n, matrix = read_kernel(kernel)
    assert n == 20
    assert matrix.shape == (21, 21)
    assert "P(X wins): propagation" in capsys.readouterr().err

def test_oracle_relative_kernel_path_lands_in_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("CONSENSUS_LAB_OUTPUT_DIR", str(tmp_path / "dumps"))
    argv = ["oracle", "--protocol", "kmaj:3", "--n", "10", "--x0", "5", "--kernel-out", "chains/kernel.bin"]
    assert main(argv) == EXIT_OK
    n, matrix = read_kernel(tmp_path / "dumps" / "chains" / "kernel.bin")
    assert n == 10
    assert matrix.shape == (11, 11)

def test_oracle_dominance(capsys):
    argv = ["oracle", "--protocol", "kmaj:3", "--n", "50", "--dominance", "--x", "0.6", "--xprime", "0.7"]
    assert main(argv) == EXIT_OK
    assert capsys.readouterr().out == "PASS\n"

def test_oracle_dominance_to_file(tmp_path):
    out = tmp_path / "verdict.txt"
    argv = ["oracle", "--protocol", "kmaj:3", "--n", "20", "--dominance", "--x", "0.5", "--xprime", "0.9",
            "--out", str(out)]
    assert main(argv) == EXIT_OK
    assert out.read_text(encoding="utf-8") == "PASS\n"

def test_oracle_respects_configured_cap(monkeypatch, capsys):
    monkeypatch.setenv("CONSENSUS_LAB_EXACT_MAX_N", "100")
    assert main(["oracle", "--protocol", "kmaj:3", "--n", "200", "--x0", "100"]) == EXIT_INVALID
    assert "n must lie in [2, 100]" in capsys.readouterr().err

def test_oracle_operation_error_exits_numerical(capsys):
    with patch("app.cli.oracle.runtime_distribution", side_effect=OperationError("mass never absorbed")):
        assert main(["oracle", "--protocol", "kmaj:3", "--n", "10", "--x0", "5"]) == EXIT_NUMERICAL
    assert "error: OperationError: mass never absorbed" in capsys.readouterr().err

# Test cases for compare

@pytest.fixture
def batch_and_cdf(tmp_path):
    batch, cdf = tmp_path / "batch.csv", tmp_path / "cdf.csv"
    argv = ["simulate", "--protocol", "kmaj:3", "--n", "100", "--runs", "40", "--x0", "60",
            "--out", str(batch), "--cdf-out", str(cdf)]
    assert main(argv) == EXIT_OK
    return batch, cdf

def test_compare_sample_with_its_own_table(batch_and_cdf, capsys):
    batch, cdf = batch_and_cdf
    capsys.readouterr()
    assert main(["compare", "--batch", str(batch), "--prediction", str(cdf)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["pass"] is True
    assert [c["name"] for c in report["criteria"]] == ["sup_cdf_distance", "mean_runtime"]

def test_compare_with_oracle(batch_and_cdf, tmp_path, capsys):
    batch, cdf = batch_and_cdf
    exact = tmp_path / "exact.csv"
    assert main(["oracle", "--protocol", "kmaj:3", "--n", "100", "--x0", "60", "--out", str(exact)]) == EXIT_OK
    capsys.readouterr()
    main(["compare", "--batch", str(batch), "--prediction", str(cdf), "--oracle", str(exact), "--oracle-tol", "1"])
    names = [c["name"] for c in json.loads(capsys.readouterr().out)["criteria"]]
    assert names[-2:] == ["oracle_sup_cdf_distance", "oracle_winner"]

def test_compare_reports_failures(batch_and_cdf, capsys):
    batch, cdf = batch_and_cdf
    capsys.readouterr()
    assert main(["compare", "--batch", str(batch), "--prediction", str(cdf), "--sup-tol", "0"]) == EXIT_FAILED_CHECK
    captured = capsys.readouterr()
    assert json.loads(captured.out)["pass"] is False
    assert "failed criteria ['sup_cdf_distance']" in captured.err

def test_compare_rejects_mismatched_population(batch_and_cdf, capsys):
    batch, cdf = batch_and_cdf
    metadata_path(cdf).write_text(json.dumps({"protocol": {"kind": "kmaj", "k": 3}, "n": 500}), encoding="utf-8")
    assert main(["compare", "--batch", str(batch), "--prediction", str(cdf)]) == EXIT_INVALID
    assert "error: SchemaError: Sample has n=100 but the prediction has n=500" in capsys.readouterr().err

def test_compare_missing_batch(tmp_path, capsys):
    argv = ["compare", "--batch", str(tmp_path / "none.csv"), "--prediction", str(tmp_path / "none.csv")]
    assert main(argv) == EXIT_INVALID
    assert "File not found" in capsys.readouterr().err

# Test cases for --config

def test_config_file_fills_unset_flags(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"protocol": "kmaj:3", "n": 100, "runs": 3, "x0": 60, "seed": "0x10"}),
                      encoding="utf-8")
    assert main(["simulate", "--config", str(config), "--runs", "2"]) == EXIT_OK
    frame = read_stdout_csv(capsys.readouterr().out)
    assert len(frame) == 2
    assert set(frame["seed"]) == {16}

def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"verbosity": 3}), encoding="utf-8")
    assert main(["simulate", "--config", str(config)]) == EXIT_INVALID
    assert "Unknown config key 'verbosity'" in capsys.readouterr().err

def test_config_file_must_be_readable(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text("[1, 2", encoding="utf-8")
    assert main(["simulate", "--config", str(config)]) == EXIT_INVALID
    assert "Could not read config file" in capsys.readouterr().err

def test_merge_config_normalises_values(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "protocol": [{"kind": "kmaj", "k": 5}, "kmaj:3"],
        "kernel-out": "kernel.bin",
        "--n": 30,
        "linear": True,
    }), encoding="utf-8")
    args = build_parser().parse_args(["oracle", "--config", str(config), "--n", "20"])
    merge_config(args)
    assert args.protocol == ['{"kind": "kmaj", "k": 5}', "kmaj:3"]
    assert str(args.kernel_out) == "kernel.bin"
    assert args.n == 20
    assert args.linear is True
