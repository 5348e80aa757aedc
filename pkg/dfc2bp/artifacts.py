"""
On-disk formats of every artifact a run produces.

Binary tensors share one header: a 4 byte magic, the dtype code and the
number of dimensions as little-endian uint32, then every dimension as a
little-endian uint64. The payload follows in C order, little-endian.
"""
import csv
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Any, Dict, Iterator, List, Sequence, Tuple

import numpy as np

from dfc2bp.dynamics import ContactEvent, Trajectory
from dfc2bp.errors import MissingArtifactError
from dfc2bp.sensory import SignalInfo

MANIFEST = "manifest.json"
TRAJECTORY = "trajectory.csv"
CONTACTS = "contacts.csv"
BABBLING = "babbling.json"
SENSORS = "sensors.csv"
SENSOR_INDEX = "sensor_index.json"
IMI = "imi.bin"
GRAPHS = "graphs.bin"
PARTITION = "partition.csv"
IRM_DIAGNOSTICS = "irm_diagnostics.json"
LINK_DENSITY = "linkdensity.bin"
FACTORS = "factors.bin"
SCORES = "scores.bin"
FACTOR_EDGES = "factor_edges.csv"
NNMF_DIAGNOSTICS = "nnmf_diagnostics.json"
EPISODES = "episodes.csv"
PLOTS = "plots"

PRODUCED_BY = {
    TRAJECTORY: "simulate",
    CONTACTS: "simulate",
    BABBLING: "simulate",
    SENSORS: "sense",
    SENSOR_INDEX: "sense",
    IMI: "imi",
    GRAPHS: "imi",
    PARTITION: "irm",
    IRM_DIAGNOSTICS: "irm",
    LINK_DENSITY: "irm",
    FACTORS: "nnmf",
    SCORES: "nnmf",
    FACTOR_EDGES: "nnmf",
    NNMF_DIAGNOSTICS: "nnmf",
    EPISODES: "nnmf",
}

IMI_MAGIC = b"IMI1"
GRAPH_MAGIC = b"GRF1"
TENSOR_MAGIC = b"TNS1"

DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
    np.dtype("<i8"): 4,
}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}

FLOAT_FORMAT = "%.17g"


class TensorFormatError(ValueError):
    pass


def require(run_dir: Path, name: str) -> Path:
    path = Path(run_dir) / name
    if not path.is_file():
        raise MissingArtifactError(name, PRODUCED_BY.get(name, "run"))
    return path


# Adapted from https://stackoverflow.com/a/3431838
def file_sha1(file_path: Path) -> str:
    hash_sha1 = hashlib.sha1()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            hash_sha1.update(chunk)
    return hash_sha1.hexdigest()


def _write_header(handle, magic: bytes, dtype: np.dtype, shape: Sequence[int]):
    handle.write(magic)
    handle.write(struct.pack("<II", DTYPE_CODES[np.dtype(dtype)], len(shape)))
    handle.write(struct.pack(f"<{len(shape)}Q", *shape))


def _read_header(handle, magic: bytes) -> Tuple[np.dtype, Tuple[int, ...]]:
    found = handle.read(4)
    if found != magic:
        raise TensorFormatError(f"expected a {magic!r} file, found magic {found!r}")
    code, ndim = struct.unpack("<II", handle.read(8))
    if code not in CODE_DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}Q", handle.read(8 * ndim))
    return CODE_DTYPES[code], tuple(shape)


def write_tensor(path: Path, array: np.ndarray, dtype="<f8"):
    array = np.ascontiguousarray(array, dtype=np.dtype(dtype))
    with open(path, "wb") as handle:
        _write_header(handle, TENSOR_MAGIC, array.dtype, array.shape)
        handle.write(array.tobytes())


def read_tensor(path: Path) -> np.ndarray:
    with open(path, "rb") as handle:
        dtype, shape = _read_header(handle, TENSOR_MAGIC)
        data = handle.read()
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) != expected:
        raise TensorFormatError(f"{path} holds {len(data)} payload bytes, expected {expected}")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


class ImiWriter(object):
    """Streams MI matrices to disk, one packed upper triangle (diagonal included) per window."""

    def __init__(self, path: Path, n_windows: int, n_signals: int):
        self.path = Path(path)
        self.n_windows = n_windows
        self.n_signals = n_signals
        self.upper = np.triu_indices(n_signals)
        self.written = 0
        self.handle = None

    def __enter__(self):
        self.handle = open(self.path, "wb")
        _write_header(self.handle, IMI_MAGIC, np.dtype("<f4"), (self.n_windows, self.n_signals))
        return self

    def __exit__(self, exc_type, *args):
        self.handle.close()
        if exc_type is None and self.written != self.n_windows:
            raise TensorFormatError(
                f"{self.path}: {self.written} windows written, {self.n_windows} announced"
            )

    def write(self, values: np.ndarray):
        self.handle.write(np.ascontiguousarray(values[self.upper], dtype="<f4").tobytes())
        self.written += 1


def read_imi_header(path: Path) -> Tuple[int, int]:
    with open(path, "rb") as handle:
        _, shape = _read_header(handle, IMI_MAGIC)
    return shape


def read_imi(path: Path) -> Iterator[np.ndarray]:
    """Full symmetric float64 matrices, in window order."""
    with open(path, "rb") as handle:
        _, (n_windows, n_signals) = _read_header(handle, IMI_MAGIC)
        upper = np.triu_indices(n_signals)
        window_bytes = upper[0].size * 4
        for _ in range(n_windows):
            packed = np.frombuffer(handle.read(window_bytes), dtype="<f4")
            if packed.size != upper[0].size:
                raise TensorFormatError(f"{path} ends before its last window")
            values = np.zeros((n_signals, n_signals))
            values[upper] = packed
            values[upper[1], upper[0]] = packed
            yield values


def write_graphs(path: Path, adjacency: np.ndarray):
    n_windows, n_signals = adjacency.shape[:2]
    upper = np.triu_indices(n_signals, k=1)
    with open(path, "wb") as handle:
        _write_header(handle, GRAPH_MAGIC, np.dtype("u1"), (n_windows, n_signals))
        for graph in adjacency:
            handle.write(np.packbits(graph[upper], bitorder="little").tobytes())


def read_graphs(path: Path) -> np.ndarray:
    with open(path, "rb") as handle:
        _, (n_windows, n_signals) = _read_header(handle, GRAPH_MAGIC)
        upper = np.triu_indices(n_signals, k=1)
        n_pairs = upper[0].size
        window_bytes = (n_pairs + 7) // 8
        adjacency = np.zeros((n_windows, n_signals, n_signals), dtype=bool)
        for window in range(n_windows):
            packed = np.frombuffer(handle.read(window_bytes), dtype=np.uint8)
            if packed.size != window_bytes:
                raise TensorFormatError(f"{path} ends before its last window")
            edges = np.unpackbits(packed, count=n_pairs, bitorder="little").astype(bool)
            adjacency[window][upper] = edges
            adjacency[window][upper[1], upper[0]] = edges
    return adjacency


def write_json(path: Path, data: Any):
    with open(path, "w") as handle:
        json.dump(data, handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_json(path: Path) -> Any:
    with open(path) as handle:
        return json.load(handle)


def _write_matrix_csv(path: Path, header: List[str], matrix: np.ndarray):
    with open(path, "w") as handle:
        np.savetxt(handle, matrix, delimiter=",", fmt=FLOAT_FORMAT, header=",".join(header), comments="")


def _read_matrix_csv(path: Path) -> Tuple[List[str], np.ndarray]:
    with open(path) as handle:
        header = handle.readline().strip().split(",")
        matrix = np.loadtxt(handle, delimiter=",", ndmin=2)
    if matrix.size == 0:
        matrix = matrix.reshape(0, len(header))
    return header, matrix


def write_trajectory(run_dir: Path, trajectory: Trajectory):
    n_joints = trajectory.q.shape[1]
    header = (
        ["t"]
        + [f"q{joint + 1}" for joint in range(n_joints)]
        + [f"qd{joint + 1}" for joint in range(n_joints)]
        + ["contact_count", "contact_force_total"]
    )
    counts = [len(events) for events in trajectory.contacts]
    forces = [math.fsum(event.force for event in events) for events in trajectory.contacts]
    matrix = np.column_stack([trajectory.t, trajectory.q, trajectory.qd, counts, forces])
    _write_matrix_csv(Path(run_dir) / TRAJECTORY, header, matrix)

    with open(Path(run_dir) / CONTACTS, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["frame", "body_a", "body_b", "x", "y", "depth", "force", "nx", "ny"])
        for frame, events in enumerate(trajectory.contacts):
            for event in events:
                writer.writerow(
                    [frame, *event.pair]
                    + [repr(float(value)) for value in (*event.point, event.depth, event.force, *event.normal)]
                )


def read_trajectory(run_dir: Path) -> Trajectory:
    header, matrix = _read_matrix_csv(require(run_dir, TRAJECTORY))
    qd_columns = [index for index, name in enumerate(header) if name.startswith("qd")]
    q_columns = [
        index
        for index, name in enumerate(header)
        if name.startswith("q") and index not in qd_columns
    ]
    contacts: List[List[ContactEvent]] = [[] for _ in range(matrix.shape[0])]
    with open(require(run_dir, CONTACTS), newline="") as handle:
        for row in csv.DictReader(handle):
            contacts[int(row["frame"])].append(
                ContactEvent(
                    pair=(row["body_a"], row["body_b"]),
                    point=(float(row["x"]), float(row["y"])),
                    depth=float(row["depth"]),
                    force=float(row["force"]),
                    normal=(float(row["nx"]), float(row["ny"])),
                )
            )
    return Trajectory(
        t=matrix[:, 0].copy(),
        q=matrix[:, q_columns],
        qd=matrix[:, qd_columns],
        contacts=contacts,
    )


def write_sensors(run_dir: Path, times: np.ndarray, frames: np.ndarray):
    header = ["t"] + [f"s{index + 1}" for index in range(frames.shape[1])]
    _write_matrix_csv(Path(run_dir) / SENSORS, header, np.column_stack([times, frames]))


def read_sensors(run_dir: Path) -> Tuple[np.ndarray, np.ndarray]:
    _, matrix = _read_matrix_csv(require(run_dir, SENSORS))
    return matrix[:, 0].copy(), matrix[:, 1:].copy()


def partition_rows(assignment, signals: Sequence[SignalInfo]) -> List[Dict[str, Any]]:
    return [
        {
            "signal_index": index,
            "cluster_id": int(cluster),
            "modality": signal.modality,
            "body": signal.body,
            "location": ";".join(repr(float(value)) for value in signal.location),
        }
        for index, (cluster, signal) in enumerate(zip(assignment, signals))
    ]


def write_partition(run_dir: Path, assignment, signals: Sequence[SignalInfo]):
    rows = partition_rows(assignment, signals)
    with open(Path(run_dir) / PARTITION, "w", newline="") as handle:
        writer = csv.DictWriter(
            handle,
            fieldnames=["signal_index", "cluster_id", "modality", "body", "location"],
            lineterminator="\n",
        )
        writer.writeheader()
        writer.writerows(rows)


def read_partition(run_dir: Path) -> np.ndarray:
    with open(require(run_dir, PARTITION), newline="") as handle:
        rows = sorted(csv.DictReader(handle), key=lambda row: int(row["signal_index"]))
    return np.array([int(row["cluster_id"]) for row in rows], dtype=np.int64)


def write_rows(path: Path, fieldnames: Sequence[str], rows: Sequence[Dict[str, Any]]):
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_rows(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))
