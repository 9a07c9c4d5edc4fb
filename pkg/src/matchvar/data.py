"""Observed-data container and CSV ingestion."""

from __future__ import annotations

import csv
from functools import cached_property
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError


def _id_sort_key(uid: str):
    # integer-like ids order numerically so default row ids tie-break by index
    try:
        return (0, int(uid), "")
    except ValueError:
        return (1, 0, uid)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Units with covariates ``X`` (n x k), outcomes ``y`` and treatment ``z``.

    Arrays are copied and made read-only on construction, so a Dataset can be
    shared between workers without defensive copies.
    """

    covariates: np.ndarray
    outcomes: np.ndarray
    treatment: np.ndarray
    unit_ids: np.ndarray = None

    def __post_init__(self):
        X = np.array(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.outcomes, dtype=float).ravel()
        z_raw = np.asarray(self.treatment).ravel()
        n = X.shape[0]
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValidationError("covariates must be a 2-D array with k >= 1 columns")
        if n < 2:
            raise ValidationError(f"need at least 2 units, got {n}")
        if y.shape[0] != n or z_raw.shape[0] != n:
            raise ValidationError("covariates, outcomes and treatment differ in length")
        if not np.all(np.isfinite(X)):
            row = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise ValidationError(f"non-finite covariate in row {row}")
        if not np.all(np.isfinite(y)):
            row = int(np.flatnonzero(~np.isfinite(y))[0])
            raise ValidationError(f"non-finite outcome in row {row}")
        bad = ~np.isin(z_raw, (0, 1))
        if np.any(bad):
            row = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"treatment must be 0 or 1, got {z_raw[row]!r} in row {row}")
        z = z_raw.astype(np.int8)

        if self.unit_ids is None:
            ids = np.array([str(i) for i in range(n)], dtype=object)
        else:
            ids = np.array([str(u) for u in self.unit_ids], dtype=object)
            if ids.shape[0] != n:
                raise ValidationError("unit_ids length differs from n")
            if len(set(ids)) != n:
                raise ValidationError("unit_ids must be distinct")

        for arr in (X, y, z, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treatment", z)
        object.__setattr__(self, "unit_ids", ids)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def k(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    @cached_property
    def id_rank(self) -> np.ndarray:
        """Position of each unit in the total order of its id (tie-break key)."""
        order = sorted(range(self.n), key=lambda i: _id_sort_key(self.unit_ids[i]))
        rank = np.empty(self.n, dtype=np.int64)
        rank[order] = np.arange(self.n)
        return rank

    def require_both_groups(self):
        if self.n_treated == 0 or self.n_control == 0:
            raise ValidationError(
                f"need at least one treated and one control unit "
                f"(n_T={self.n_treated}, n_C={self.n_control})"
            )


@dataclass(frozen=True, eq=False)
class TruthInfo:
    """Ground truth that only a simulation can supply.

    ``f0`` optionally holds the control response surface as a callable on an
    (m, k) covariate array; diagnostics that need derivatives use it.
    """

    f0_values: np.ndarray
    tau_values: np.ndarray
    noise_sd: float
    satt: float
    population_att: float
    f0: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)


def split_by_treatment(d: Dataset) -> tuple[list[int], list[int]]:
    """Return sorted (treated, control) row indices."""
    treated = np.flatnonzero(d.treatment == 1).tolist()
    control = np.flatnonzero(d.treatment == 0).tolist()
    return treated, control


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: cannot parse {text!r} as a number") from None


def load_csv(
    path,
    outcome: str,
    treatment: str,
    covariates: Optional[Sequence[str]] = None,
    id_col: Optional[str] = None,
) -> Dataset:
    """Read a Dataset from a UTF-8, comma-delimited CSV with a header row.

    Rows are numbered from 1 (the first data row) in error messages. When
    ``covariates`` is omitted every column other than the outcome, treatment
    and id columns is used, in file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [r for r in reader if r]

    if covariates is None:
        covariates = [h for h in header if h not in {outcome, treatment, id_col}]
    needed = [outcome, treatment, *covariates] + ([id_col] if id_col else [])
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
    if not covariates:
        raise SchemaError(f"{path}: no covariate columns")

    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    X = np.empty((n, len(covariates)))
    y = np.empty(n)
    z = np.empty(n, dtype=np.int8)
    ids = [] if id_col else None
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        y[r - 1] = _parse_float(row[pos[outcome]], r, outcome)
        for c, name in enumerate(covariates):
            X[r - 1, c] = _parse_float(row[pos[name]], r, name)
        zv = _parse_float(row[pos[treatment]], r, treatment)
        if zv not in (0.0, 1.0):
            raise ValidationError(f"row {r}, column {treatment!r}: treatment must be 0 or 1, got {row[pos[treatment]]!r}")
        z[r - 1] = int(zv)
        if ids is not None:
            ids.append(row[pos[id_col]])
    for name, arr in (("outcome", y[:, None]), ("covariate", X)):
        if not np.all(np.isfinite(arr)):
            r = int(np.argwhere(~np.isfinite(arr))[0, 0]) + 1
            raise ValidationError(f"row {r}: non-finite {name} value")
    return Dataset(X, y, z, ids)


def save_csv(
    d: Dataset,
    path,
    outcome: str = "y",
    treatment: str = "z",
    covariates: Optional[Sequence[str]] = None,
    id_col: Optional[str] = "id",
) -> None:
    """Write ``d`` so that :func:`load_csv` reproduces it bit for bit."""
    if covariates is None:
        covariates = [f"x{j + 1}" for j in range(d.k)]
    header = ([id_col] if id_col else []) + [outcome, treatment, *covariates]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(d.n):
            row = [] if not id_col else [d.unit_ids[i]]
            row.append(format(d.outcomes[i], ".17g"))
            row.append(str(int(d.treatment[i])))
            row.extend(format(v, ".17g") for v in d.covariates[i])
            w.writerow(row)

