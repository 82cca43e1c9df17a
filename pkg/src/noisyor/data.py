"""Dataset container and JSONL serialization shared by the synthetic generator
and the text-ingest pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import PatientRecord


@dataclass
class Dataset:
    """Column-major view of a record collection.

    X: (N, n) binary features, A: (N, m) aggregated anchors, Y: (N, m) true
    labels or None, ids: record identifiers.
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray | None = None
    ids: list[str] | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.int8)
        self.A = np.asarray(self.A, dtype=np.int8)
        if self.Y is not None:
            self.Y = np.asarray(self.Y, dtype=np.int8)
        if self.ids is None:
            self.ids = [f"rec{k:06d}" for k in range(self.X.shape[0])]

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    def record(self, k: int) -> PatientRecord:
        return PatientRecord(
            x=self.X[k],
            a=self.A[k],
            y=None if self.Y is None else self.Y[k],
            id=self.ids[k],
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            X=self.X[idx],
            A=self.A[idx],
            Y=None if self.Y is None else self.Y[idx],
            ids=[self.ids[int(k)] for k in idx],
        )

    @staticmethod
    def from_records(records: list[PatientRecord]) -> "Dataset":
        has_y = records and records[0].y is not None
        return Dataset(
            X=np.stack([r.x for r in records]),
            A=np.stack([r.a for r in records]),
            Y=np.stack([r.y for r in records]) if has_y else None,
            ids=[r.id for r in records],
        )

    # ------------------------------------------------------------------
    # JSONL round trip: one record per line, x stored as indices of the
    # set bits to keep files small.

    def save_jsonl(self, path: str | Path) -> None:
        n = self.n
        with open(path, "w") as fh:
            fh.write(json.dumps({"format": "noisyor-dataset", "n": n, "m": self.m}) + "\n")
            for k in range(len(self)):
                row = {
                    "id": self.ids[k],
                    "x": np.flatnonzero(self.X[k]).tolist(),
                    "a": self.A[k].tolist(),
                }
                if self.Y is not None:
                    row["y"] = self.Y[k].tolist()
                fh.write(json.dumps(row) + "\n")

    @staticmethod
    def load_jsonl(path: str | Path) -> "Dataset":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("format") != "noisyor-dataset":
                raise ValueError(f"{path} is not a noisyor dataset file")
            n, m = header["n"], header["m"]
            ids, xs, as_, ys = [], [], [], []
            for line in fh:
                row = json.loads(line)
                x = np.zeros(n, dtype=np.int8)
                x[row["x"]] = 1
                ids.append(row["id"])
                xs.append(x)
                as_.append(row["a"])
                if "y" in row:
                    ys.append(row["y"])
        return Dataset(
            X=np.stack(xs) if xs else np.zeros((0, n), dtype=np.int8),
            A=np.asarray(as_, dtype=np.int8).reshape(-1, m),
            Y=np.asarray(ys, dtype=np.int8) if ys else None,
            ids=ids,
        )
