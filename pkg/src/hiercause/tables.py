"""Column-sliced sample matrices.

A SampleTable holds n samples of several named variables side by side; each
variable owns a contiguous block of columns. Serialization is a raw
little-endian float64 blob (row-major) plus a JSON sidecar describing the
slices, which round-trips bit-exactly. CSV export labels columns
``<variable>_<k>``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class SampleTable:
    """n_samples x total_dim matrix with named, disjoint column slices."""

    data: np.ndarray
    slices: dict[str, tuple[int, int]]  # id -> (column offset, width)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("data must be 2-d")
        if self.data.shape[0] < 1:
            raise ValueError("need at least one sample")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("table contains non-finite entries")
        covered = np.zeros(self.data.shape[1], dtype=bool)
        for name, (off, width) in self.slices.items():
            if width < 1 or off < 0 or off + width > self.data.shape[1]:
                raise ValueError(f"slice {name!r} out of bounds")
            if covered[off:off + width].any():
                raise ValueError(f"slice {name!r} overlaps another slice")
            covered[off:off + width] = True
        if not covered.all():
            raise ValueError("slices do not cover all columns")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def ids(self) -> list[str]:
        return sorted(self.slices, key=lambda k: self.slices[k][0])

    def get(self, name: str) -> np.ndarray:
        off, width = self.slices[name]
        return self.data[:, off:off + width]

    def width(self, name: str) -> int:
        return self.slices[name][1]

    def select(self, names: list[str]) -> np.ndarray:
        """Concatenate the given variables' columns in the order given."""
        return np.concatenate([self.get(n) for n in names], axis=1)


def from_columns(columns: dict[str, np.ndarray]) -> SampleTable:
    """Build a table from per-variable matrices, laid out in insertion order."""
    slices, blocks, off = {}, [], 0
    for name, block in columns.items():
        block = np.atleast_2d(np.asarray(block, dtype=np.float64))
        if block.ndim != 2:
            raise ValueError(f"{name!r}: blocks must be 2-d")
        slices[name] = (off, block.shape[1])
        off += block.shape[1]
        blocks.append(block)
    return SampleTable(np.concatenate(blocks, axis=1), slices)


def save_table(table: SampleTable, path_base: str | Path) -> None:
    base = Path(path_base)
    base.with_suffix(".f64").write_bytes(
        np.ascontiguousarray(table.data).astype("<f8").tobytes())
    sidecar = {
        "kind": "sample-table",
        "n_samples": table.n_samples,
        "total_dim": table.data.shape[1],
        "slices": {k: list(v) for k, v in table.slices.items()},
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_table(path_base: str | Path) -> SampleTable:
    base = Path(path_base)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    if sidecar.get("kind") != "sample-table":
        raise ValueError(f"{base}: sidecar is not a sample-table descriptor")
    n, d = sidecar["n_samples"], sidecar["total_dim"]
    flat = np.frombuffer(base.with_suffix(".f64").read_bytes(), dtype="<f8")
    if flat.size != n * d:
        raise ValueError(f"{base}: blob size {flat.size} != {n}x{d}")
    slices = {k: (int(v[0]), int(v[1])) for k, v in sidecar["slices"].items()}
    return SampleTable(flat.reshape(n, d).copy(), slices)


def save_csv(table: SampleTable, path: str | Path) -> None:
    header = []
    for name in table.ids:
        header.extend(f"{name}_{k}" for k in range(table.width(name)))
    order = np.concatenate([np.arange(off, off + w)
                            for off, w in (table.slices[n] for n in table.ids)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in table.data[:, order]:
            # repr of a python float is the shortest exact round-trip form
            writer.writerow([repr(float(v)) for v in row])
