"""Fixed design matrix and response, with per-feature sort order.

The split search and the coefficient streaming both traverse each
feature in sorted order, so the sort permutations are built once at
load time and shared (the dataset is immutable afterwards).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Base class for dataset loading/validation failures."""


class NonNumericCellError(DatasetError):
    def __init__(self, row: int, column: str, raw: str):
        self.row, self.column, self.raw = row, column, raw
        super().__init__(f"non-numeric value {raw!r} at data row {row}, column {column!r}")


class MissingResponseError(DatasetError):
    def __init__(self, column: str, available: list[str]):
        super().__init__(f"response column {column!r} not found; columns are {available}")


class TooFewRowsError(DatasetError):
    def __init__(self, n: int):
        super().__init__(f"need at least 2 data rows, got {n}")


@dataclass(frozen=True)
class Dataset:
    """Immutable covariate matrix, response, and sorted-feature indexing."""

    X: np.ndarray  # (n, p) float64
    y: np.ndarray  # (n,) float64
    sort_idx: np.ndarray = field(repr=False)  # (p, n) argsort of each column
    sorted_values: np.ndarray = field(repr=False)  # (p, n) X[sort_idx[j], j]
    distinct_rank: np.ndarray = field(repr=False)  # (p, n-1) rank s usable: x_(s) < x_(s+1)
    feature_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_arrays(cls, X, y, feature_names=None) -> "Dataset":
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(y, dtype=np.float64)).ravel()
        if X.ndim != 2:
            raise DatasetError(f"X must be 2-dimensional, got shape {X.shape}")
        n, p = X.shape
        if y.shape[0] != n:
            raise DatasetError(f"y length {y.shape[0]} does not match {n} rows of X")
        if n < 2:
            raise TooFewRowsError(n)
        if p < 1:
            raise DatasetError("need at least one covariate column")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DatasetError("X and y must be finite (no NaN/inf)")
        sort_idx = np.argsort(X, axis=0, kind="stable").T.copy()
        sorted_values = np.take_along_axis(X.T, sort_idx, axis=1)
        distinct_rank = sorted_values[:, :-1] < sorted_values[:, 1:]
        if feature_names is None:
            feature_names = tuple(f"x{j + 1}" for j in range(p))
        else:
            feature_names = tuple(feature_names)
            if len(feature_names) != p:
                raise DatasetError("feature_names length does not match column count")
        return cls(X, y, sort_idx, sorted_values, distinct_rank, feature_names)

    def order_statistic(self, j: int, s: int) -> float:
        """Value of the s-th smallest entry of feature j (s is 1-based and
        must leave at least one observation on the far side)."""
        if not 0 <= j < self.p:
            raise IndexError(f"feature index {j} out of range [0, {self.p})")
        if not 1 <= s <= self.n - 1:
            raise IndexError(f"rank {s} out of range [1, {self.n - 1}]")
        return float(self.sorted_values[j, s - 1])

    def rank_of_threshold(self, j: int, value: float) -> int:
        """Largest 1-based rank s with order_statistic(j, s) <= value."""
        return int(np.searchsorted(self.sorted_values[j], value, side="right"))

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.X.tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()


def load_csv(path, response_col: str) -> Dataset:
    """Read a headered numeric CSV; every non-response column is a covariate."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        if response_col not in header:
            raise MissingResponseError(response_col, header)
        resp_idx = header.index(response_col)
        rows: list[list[float]] = []
        for r, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DatasetError(f"row {r} has {len(row)} cells, expected {len(header)}")
            vals = []
            for cname, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise NonNumericCellError(r, cname, cell) from None
            rows.append(vals)
    if len(rows) < 2:
        raise TooFewRowsError(len(rows))
    data = np.asarray(rows, dtype=np.float64)
    y = data[:, resp_idx]
    X = np.delete(data, resp_idx, axis=1)
    names = [c for i, c in enumerate(header) if i != resp_idx]
    return Dataset.from_arrays(X, y, feature_names=names)


def save_csv(d: Dataset, path, response_col: str = "y", sidecar: bool = True) -> None:
    """Write the dataset back out with round-trip-exact float text."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(d.feature_names) + [response_col])
        for i in range(d.n):
            writer.writerow([repr(float(v)) for v in d.X[i]] + [repr(float(d.y[i]))])
    if sidecar:
        meta = {
            "schema": "treeval/dataset-meta/v1",
            "response": response_col,
            "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            "n": d.n,
            "p": d.p,
        }
        path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=2))
