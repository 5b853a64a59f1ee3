########################
# Data Export / Import #
########################

import json
from pathlib import Path
import struct
import sys
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.exceptions import OperationError, SchemaError
from app.logger import Logger
from app.protocols import ProtocolFactory
from app.run_outcome import RunOutcome
from app.stats import TabulatedRuntimeLaw

BATCH_COLUMNS = ['run_index', 'runtime', 'winner', 'x0', 'n', 'seed']
TRAJECTORY_COLUMNS = ['run_index', 't', 'x_t']
CDF_COLUMNS = ['s', 'P_R_geq_s']

KERNEL_MAGIC = b"CLKERNEL"
KERNEL_HEADER = struct.Struct("<8sQ")

PathLike = Union[str, Path]


def metadata_path(path: PathLike) -> Path:
    """Sidecar location: <file>.meta.json next to the data file."""
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _emit(frame: pd.DataFrame, out: Optional[PathLike], sep: str, encoding: str) -> None:
    if out is None:
        frame.to_csv(sys.stdout, index=False, sep=sep, lineterminator="\n")
        return
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=False, sep=sep, lineterminator="\n", encoding=encoding)
    Logger.infoLog(f"Wrote {len(frame)} rows to {target}")


def write_csv(frame: pd.DataFrame, out: Optional[PathLike] = None, encoding: str = "utf-8") -> None:
    """Comma-separated table with a header row; stdout when out is None."""
    _emit(frame, out, ",", encoding)


def write_plot_data(frame: pd.DataFrame, out: Optional[PathLike] = None, encoding: str = "utf-8") -> None:
    """Single-space-separated columns with a header row, first column the abscissa."""
    _emit(frame, out, " ", encoding)


def write_json(data: Dict[str, Any], out: Optional[PathLike] = None, encoding: str = "utf-8") -> None:
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding=encoding)


def write_metadata(data_file: PathLike, metadata: Dict[str, Any], encoding: str = "utf-8") -> Path:
    target = metadata_path(data_file)
    write_json(metadata, target, encoding)
    return target


def read_metadata(data_file: PathLike, encoding: str = "utf-8") -> Dict[str, Any]:
    """Return the sidecar of a data file, or an empty dict when there is none."""
    target = metadata_path(data_file)
    if not target.exists():
        return {}
    try:
        return json.loads(target.read_text(encoding=encoding))
    except json.JSONDecodeError as e:
        raise SchemaError(f"Invalid metadata in {target}: {e}") from e


def batch_frame(outcomes: Iterable[RunOutcome]) -> pd.DataFrame:
    return pd.DataFrame([outcome.to_dict() for outcome in outcomes], columns=BATCH_COLUMNS)


def trajectory_frame(outcomes: Iterable[RunOutcome]) -> pd.DataFrame:
    rows: List[Dict[str, int]] = []
    for outcome in outcomes:
        rows.extend(outcome.trajectory_rows())
    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def _read_table(path: PathLike, columns: List[str], encoding: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, encoding=encoding)
    except FileNotFoundError as e:
        raise SchemaError(f"File not found: {path}") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise SchemaError(f"Could not parse {path}: {e}") from e
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise SchemaError(f"{path} is missing columns {missing}; found {list(frame.columns)}")
    return frame


def read_batch_csv(path: PathLike, encoding: str = "utf-8") -> List[RunOutcome]:
    """
    Load a batch CSV written by the simulate subcommand.

    Raises:
        SchemaError: If columns are missing or a row is malformed.
    """
    frame = _read_table(path, BATCH_COLUMNS, encoding)
    outcomes = [RunOutcome.from_dict(row) for row in frame.to_dict(orient="records")]
    Logger.infoLog(f"Loaded {len(outcomes)} run outcomes from {path}")
    return outcomes


def read_runtime_cdf(path: PathLike, encoding: str = "utf-8") -> TabulatedRuntimeLaw:
    """
    Load an (s, P_R_geq_s) table and its metadata sidecar.

    Raises:
        SchemaError: If columns are missing or the sidecar names an unknown protocol.
    """
    frame = _read_table(path, CDF_COLUMNS, encoding)
    metadata = read_metadata(path, encoding)
    label = ""
    if "protocol" in metadata:
        try:
            label = ProtocolFactory.from_dict(metadata["protocol"]).shorthand()
        except Exception as e:
            raise SchemaError(f"Invalid protocol in metadata of {path}: {e}") from e
    return TabulatedRuntimeLaw(
        frame['s'].to_numpy(),
        frame['P_R_geq_s'].to_numpy(),
        n=int(metadata["n"]) if "n" in metadata else None,
        protocol_label=label,
        metadata=metadata,
    )


def write_kernel(kernel: np.ndarray, out: PathLike) -> Path:
    """
    Dump a kernel as a 16-byte header (magic, uint64 n, little endian) followed by
    row-major little-endian float64 entries.
    """
    matrix = np.ascontiguousarray(kernel, dtype="<f8")
    n = matrix.shape[0] - 1
    if matrix.shape != (n + 1, n + 1):
        raise OperationError(f"Kernel must be square, got shape {matrix.shape}")
    target = Path(out)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "wb") as handle:
        handle.write(KERNEL_HEADER.pack(KERNEL_MAGIC, n))
        handle.write(matrix.tobytes(order="C"))
    Logger.infoLog(f"Wrote kernel of size {n + 1} to {target}")
    return target


def read_kernel(path: PathLike) -> Tuple[int, np.ndarray]:
    """
    Raises:
        SchemaError: On a bad magic number or a truncated payload.
    """
    data = Path(path).read_bytes()
    if len(data) < KERNEL_HEADER.size:
        raise SchemaError(f"{path} is too short for a kernel header")
    magic, n = KERNEL_HEADER.unpack_from(data)
    if magic != KERNEL_MAGIC:
        raise SchemaError(f"{path} is not a kernel dump (magic {magic!r})")
    expected = (n + 1) * (n + 1) * 8
    payload = data[KERNEL_HEADER.size:]
    if len(payload) != expected:
        raise SchemaError(f"{path} holds {len(payload)} payload bytes, expected {expected}")
    kernel = np.frombuffer(payload, dtype="<f8").reshape(n + 1, n + 1).astype(float)
    return int(n), kernel
