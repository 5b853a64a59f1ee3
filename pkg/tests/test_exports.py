import json
import pytest
import numpy as np
import pandas as pd

from app.exceptions import OperationError, SchemaError
from app.exports import (
    BATCH_COLUMNS,
    KERNEL_HEADER,
    batch_frame,
    metadata_path,
    read_batch_csv,
    read_kernel,
    read_metadata,
    read_runtime_cdf,
    trajectory_frame,
    write_csv,
    write_json,
    write_kernel,
    write_metadata,
    write_plot_data,
)
from app.run_outcome import RunOutcome, Winner


@pytest.fixture
def outcomes():
    return [
        RunOutcome(0, 12, Winner.X, 60, 100, 5, trajectory=[60, 90, 100]),
        RunOutcome(1, 250, Winner.UNRESOLVED, 60, 100, 5, trajectory=[60, 55]),
    ]


# Test cases for writers

def test_metadata_path(tmp_path):
    assert metadata_path(tmp_path / "cdf.csv") == tmp_path / "cdf.csv.meta.json"

def test_write_csv_to_stdout(capsys):
    write_csv(pd.DataFrame({"s": [0, 1], "P_R_geq_s": [1.0, 0.5]}))
    assert capsys.readouterr().out == "s,P_R_geq_s\n0,1.0\n1,0.5\n"

def test_write_plot_data_creates_parent_directories(tmp_path):
    target = tmp_path / "plots" / "g.dat"
    write_plot_data(pd.DataFrame({"x": [0.0, 0.5], "g": [0.0, -0.1]}), target)
    assert target.read_text(encoding="utf-8") == "x g\n0.0 0.0\n0.5 -0.1\n"

def test_write_json_is_sorted_and_terminated(capsys):
    write_json({"b": 1, "a": [1, 2]})
    assert capsys.readouterr().out == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'

def test_metadata_round_trip(tmp_path):
    data_file = tmp_path / "batch.csv"
    written = write_metadata(data_file, {"n": 100, "protocol": {"kind": "kmaj", "k": 3}})
    assert written == metadata_path(data_file)
    assert read_metadata(data_file) == {"n": 100, "protocol": {"kind": "kmaj", "k": 3}}

def test_read_metadata_without_sidecar(tmp_path):
    assert read_metadata(tmp_path / "nothing.csv") == {}

def test_read_metadata_rejects_bad_json(tmp_path):
    data_file = tmp_path / "cdf.csv"
    metadata_path(data_file).write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaError, match="Invalid metadata"):
        read_metadata(data_file)

# Test cases for batch and trajectory tables

def test_batch_frame(outcomes):
    frame = batch_frame(outcomes)
    assert list(frame.columns) == BATCH_COLUMNS
    assert frame["winner"].tolist() == ["X", "Unresolved"]

def test_batch_frame_of_no_runs():
    assert list(batch_frame([]).columns) == BATCH_COLUMNS

def test_trajectory_frame(outcomes):
    frame = trajectory_frame(outcomes)
    assert list(frame.columns) == ["run_index", "t", "x_t"]
    assert frame["x_t"].tolist() == [60, 90, 100, 60, 55]
    assert frame["run_index"].tolist() == [0, 0, 0, 1, 1]

def test_batch_csv_round_trip(tmp_path, outcomes):
    target = tmp_path / "batch.csv"
    write_csv(batch_frame(outcomes), target)
    assert read_batch_csv(target) == outcomes

def test_read_batch_csv_missing_file(tmp_path):
    with pytest.raises(SchemaError, match="File not found"):
        read_batch_csv(tmp_path / "absent.csv")

def test_read_batch_csv_empty_file(tmp_path):
    target = tmp_path / "empty.csv"
    target.write_text("", encoding="utf-8")
    with pytest.raises(SchemaError, match="Could not parse"):
        read_batch_csv(target)

def test_read_batch_csv_missing_column(tmp_path):
    target = tmp_path / "batch.csv"
    target.write_text("run_index,runtime,winner\n0,3,X\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="is missing columns \\['x0', 'n', 'seed'\\]"):
        read_batch_csv(target)

def test_read_batch_csv_bad_row(tmp_path):
    target = tmp_path / "batch.csv"
    target.write_text("run_index,runtime,winner,x0,n,seed\n0,3,Z,1,2,0\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="Unknown winner label"):
        read_batch_csv(target)

# Test cases for runtime CDF tables

def test_runtime_cdf_round_trip(tmp_path):
    target = tmp_path / "cdf.csv"
    write_csv(pd.DataFrame({"s": [3, 4, 5], "P_R_geq_s": [1.0, 0.4, 0.0]}), target)
    write_metadata(target, {"protocol": {"kind": "kmaj", "k": 5}, "n": 1000, "win_probability": 0.5})
    law = read_runtime_cdf(target)
    assert law.label == "kmaj:5"
    assert law.n == 1000
    assert law.survival(4) == 0.4
    assert law.win_probability() == 0.5

def test_runtime_cdf_without_sidecar(tmp_path):
    target = tmp_path / "cdf.csv"
    write_csv(pd.DataFrame({"s": [0, 1], "P_R_geq_s": [1.0, 0.0]}), target)
    law = read_runtime_cdf(target)
    assert law.label == ""
    assert law.n is None

def test_runtime_cdf_with_unknown_protocol(tmp_path):
    target = tmp_path / "cdf.csv"
    write_csv(pd.DataFrame({"s": [0], "P_R_geq_s": [1.0]}), target)
    write_metadata(target, {"protocol": {"kind": "voter"}})
    with pytest.raises(SchemaError, match="Invalid protocol in metadata"):
        read_runtime_cdf(target)

def test_runtime_cdf_missing_column(tmp_path):
    target = tmp_path / "cdf.csv"
    target.write_text("s,P\n0,1.0\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="is missing columns \\['P_R_geq_s'\\]"):
        read_runtime_cdf(target)

# Test cases for kernel dumps

def test_kernel_round_trip(tmp_path):
    kernel = np.array([[1.0, 0.0, 0.0], [0.25, 0.5, 0.25], [0.0, 0.0, 1.0]])
    target = write_kernel(kernel, tmp_path / "kernel.bin")
    data = target.read_bytes()
    assert data[:8] == b"CLKERNEL"
    assert len(data) == KERNEL_HEADER.size + 9 * 8
    n, loaded = read_kernel(target)
    assert n == 2
    np.testing.assert_array_equal(loaded, kernel)

def test_write_kernel_rejects_non_square(tmp_path):
    with pytest.raises(OperationError, match="Kernel must be square"):
        write_kernel(np.zeros((2, 3)), tmp_path / "kernel.bin")

@pytest.mark.parametrize("payload, message", [
    (b"CLKER", "too short"),
    (KERNEL_HEADER.pack(b"NOTAKERN", 1) + bytes(32), "not a kernel dump"),
    (KERNEL_HEADER.pack(b"CLKERNEL", 2) + bytes(16), "expected 72"),
])
def test_read_kernel_rejects_corrupt_files(tmp_path, payload, message):
    target = tmp_path / "kernel.bin"
    target.write_bytes(payload)
    with pytest.raises(SchemaError, match=message):
        read_kernel(target)

def test_metadata_is_plain_json(tmp_path):
    data_file = tmp_path / "g.dat"
    write_metadata(data_file, {"g0": 0.45})
    assert json.loads(metadata_path(data_file).read_text(encoding="utf-8")) == {"g0": 0.45}
