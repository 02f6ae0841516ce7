"""Detection-record layout, reference signals and stream file I/O."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

NODES = ("A", "B_armA", "B_armC", "C")
NODE_CODE = {name: i for i, name in enumerate(NODES)}
# physical station (clock domain) of each detection node
STATION = {"A": "A", "B_armA": "B", "B_armC": "B", "C": "C"}
STATIONS = ("A", "B", "C")
DETECTORS = ("plus", "minus")

RECORD_DTYPE = np.dtype([
    ("node", "u1"),
    ("detector", "u1"),
    ("setting", "u1"),
    ("tick", "<u8"),
    ("block_index", "<u4"),
])
RECORD_COLUMNS = RECORD_DTYPE.names


@dataclass(frozen=True)
class ReferenceSignal:
    kind: Literal["square_10kHz", "pulse_1Hz"]
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1)
        if e.size > 1 and np.any(np.diff(e) <= 0):
            raise ValueError("reference edges must be strictly increasing")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)


def empty_stream() -> np.ndarray:
    return np.zeros(0, dtype=RECORD_DTYPE)


def make_stream(node: str, detector, setting, tick, block_index) -> np.ndarray:
    """Build a record array sorted by tick (stable, so equal ticks keep input order)."""
    tick = np.asarray(tick, dtype=np.int64)
    order = np.argsort(tick, kind="stable")
    out = np.empty(tick.size, dtype=RECORD_DTYPE)
    out["node"] = NODE_CODE[node]
    out["detector"] = np.asarray(detector)[order]
    out["setting"] = np.asarray(setting)[order]
    out["tick"] = tick[order]
    out["block_index"] = np.asarray(block_index)[order]
    return out


def is_sorted(stream: np.ndarray) -> bool:
    return bool(np.all(np.diff(stream["tick"].astype(np.int64)) >= 0)) if stream.size else True


def write_stream(path: Path, stream: np.ndarray, fmt: Literal["binary", "csv"] = "binary") -> None:
    path = Path(path)
    if fmt == "binary":
        np.ascontiguousarray(stream, dtype=RECORD_DTYPE).tofile(path)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for rec in stream.tolist():
            w.writerow(rec)


def read_stream(path: Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != RECORD_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(RECORD_COLUMNS)}")
        body = rows[1:]
        out = np.empty(len(body), dtype=RECORD_DTYPE)
        for i, name in enumerate(RECORD_COLUMNS):
            out[name] = [int(r[i]) for r in body]
        return out
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_DTYPE.itemsize:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of the "
                         f"{RECORD_DTYPE.itemsize}-byte record")
    return raw.view(RECORD_DTYPE).copy()


def write_reference(path: Path, ref: ReferenceSignal) -> None:
    ref.edges.astype("<i8").tofile(Path(path))


def read_reference(path: Path, kind: str) -> ReferenceSignal:
    return ReferenceSignal(kind, np.fromfile(Path(path), dtype="<i8"))


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
