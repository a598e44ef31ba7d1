"""Data model for partially observed matrices and parameter-chain traces.

An :class:`IncompleteMatrix` holds the raw observations, a boolean
observation mask and a working imputation overlay.  The overlay always
agrees with the observed cells; only the unobserved cells change as an
imputation loop proceeds.  :class:`ChainTrace` stores the per-iteration
parameter snapshots produced by the driver in :mod:`icfit.engine`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    AllMissingColumn,
    DimensionMismatch,
    EmptyWindow,
    NonFiniteObserved,
)

NA_STRING = "NA"


@dataclass(frozen=True)
class IncompleteMatrix:
    """n x p observations with a missingness mask and imputation overlay.

    ``mask[i, j]`` is True where the value was observed.  ``imputed``
    equals ``values`` at observed cells; at unobserved cells it holds the
    current imputation (NaN until something fills them).
    """

    values: np.ndarray
    mask: np.ndarray
    imputed: np.ndarray

    def __post_init__(self):
        values, mask, imputed = self.values, self.mask, self.imputed
        if values.ndim != 2 or mask.shape != values.shape or imputed.shape != values.shape:
            raise DimensionMismatch(
                f"shapes disagree: {values.shape}, {mask.shape}, {imputed.shape}"
            )
        if not np.all(np.isfinite(values[mask])):
            raise NonFiniteObserved("observed cells must be finite")
        for j in range(values.shape[1]):
            if not mask[:, j].any():
                raise AllMissingColumn(j)
        if not np.array_equal(imputed[mask], values[mask]):
            raise DimensionMismatch("overlay disagrees with observed cells")
        # freeze the arrays so shared read-only use is safe
        for a in (values, mask, imputed):
            a.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_missing(self) -> int:
        return int((~self.mask).sum())

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    def with_overlay(self, imputed: np.ndarray) -> "IncompleteMatrix":
        """Copy-and-replace the imputation overlay; observed cells must match."""
        return IncompleteMatrix(self.values, self.mask, np.array(imputed, dtype=float))

    def export(self, missing_marker=np.nan) -> np.ndarray:
        """Original cell layout with the sentinel restored at unobserved cells."""
        out = np.array(self.values, dtype=float)
        out[~self.mask] = missing_marker
        return out


def make_incomplete(values, missing_marker=np.nan) -> IncompleteMatrix:
    """Build an IncompleteMatrix from a raw matrix with a missingness sentinel.

    The sentinel is NaN by default; any finite marker value is matched
    exactly.  Every column needs at least one observed entry.
    """
    values = np.array(values, dtype=float)
    if values.ndim != 2:
        raise DimensionMismatch("expected a 2-d matrix")
    if missing_marker is None or (isinstance(missing_marker, float) and np.isnan(missing_marker)):
        mask = ~np.isnan(values)
    else:
        mask = values != missing_marker
    imputed = np.array(values)
    imputed[~mask] = np.nan
    clean = np.array(values)
    clean[~mask] = 0.0  # stored values at unobserved cells are irrelevant
    return IncompleteMatrix(clean, mask, np.where(mask, clean, np.nan))


def median_fill(m: IncompleteMatrix) -> IncompleteMatrix:
    """Fill each unobserved cell with the median of its column's observed values."""
    imputed = np.array(m.values, dtype=float)
    for j in range(m.shape[1]):
        miss = ~m.mask[:, j]
        if miss.any():
            imputed[miss, j] = np.median(m.values[m.mask[:, j], j])
    return m.with_overlay(imputed)


@dataclass(frozen=True)
class ParameterSnapshot:
    """One iteration's flattened parameter vector."""

    label: int
    payload: np.ndarray

    def __post_init__(self):
        if self.label < 0:
            raise ValueError("label must be nonnegative")
        if not np.all(np.isfinite(self.payload)):
            raise ValueError("payload contains non-finite entries")


@dataclass
class ChainTrace:
    """Ordered parameter snapshots plus the burn-in count used for averaging."""

    snapshots: list[ParameterSnapshot] = field(default_factory=list)
    burn_in: int = 0

    def append(self, snap: ParameterSnapshot) -> None:
        if self.snapshots:
            if snap.label <= self.snapshots[-1].label:
                raise ValueError("snapshot labels must strictly increase")
            if snap.payload.shape != self.snapshots[-1].payload.shape:
                raise DimensionMismatch("payload length changed mid-chain")
        self.snapshots.append(snap)

    def __len__(self) -> int:
        return len(self.snapshots)

    def payload_matrix(self) -> np.ndarray:
        """(iterations, dim) stack of all payloads."""
        return np.array([s.payload for s in self.snapshots])

    def post_burn_in(self) -> np.ndarray:
        """(kept, dim) stack of payloads with label >= burn_in."""
        kept = [s.payload for s in self.snapshots if s.label >= self.burn_in]
        if not kept:
            raise EmptyWindow("no snapshots past burn-in")
        return np.array(kept)


def chain_average(trace: ChainTrace) -> np.ndarray:
    """Componentwise mean of the post-burn-in payloads."""
    return trace.post_burn_in().mean(axis=0)


# --- CSV interfaces -------------------------------------------------------
#
# Data files: header row, "NA" marks a missing cell, row-major.  Lines
# starting with '#' are treated as comments (used for manifest stamps).


def read_incomplete_csv(path) -> IncompleteMatrix:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        width = len(header)
        for rec in reader:
            if not rec:
                continue
            if len(rec) != width:
                raise DimensionMismatch(f"row width {len(rec)} != header width {width}")
            rows.append([np.nan if c == NA_STRING else float(c) for c in rec])
    return make_incomplete(np.array(rows, dtype=float))


def write_incomplete_csv(path, m: IncompleteMatrix, header=None, comment=None) -> None:
    data = m.export()
    _write_matrix_csv(path, data, header=header, comment=comment, na=True)


def write_matrix_csv(path, data, header=None, comment=None) -> None:
    _write_matrix_csv(path, np.asarray(data, dtype=float), header=header, comment=comment, na=False)


def _write_matrix_csv(path, data, header, comment, na) -> None:
    n, p = data.shape
    if header is None:
        header = [f"v{j + 1}" for j in range(p)]
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n):
            writer.writerow(
                [NA_STRING if na and np.isnan(x) else repr(float(x)) for x in data[i]]
            )


def read_matrix_csv(path) -> np.ndarray:
    return read_incomplete_csv(path).imputed if _csv_has_na(path) else _read_dense(path)


def _csv_has_na(path) -> bool:
    with open(path) as fh:
        return any(NA_STRING in line for line in fh if not line.startswith("#"))


def _read_dense(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        next(reader)
        for rec in reader:
            if rec:
                rows.append([float(c) for c in rec])
    return np.array(rows, dtype=float)


def write_trace_csv(path, trace: ChainTrace, comment=None) -> None:
    """One row per iteration, one column per parameter coordinate."""
    mat = trace.payload_matrix()
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration"] + [f"c{k}" for k in range(mat.shape[1])])
        for snap in trace.snapshots:
            writer.writerow([snap.label] + [repr(float(x)) for x in snap.payload])


def read_trace_csv(path, burn_in=0) -> ChainTrace:
    trace = ChainTrace(burn_in=burn_in)
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        next(reader)
        for rec in reader:
            if rec:
                trace.append(
                    ParameterSnapshot(int(rec[0]), np.array([float(c) for c in rec[1:]]))
                )
    return trace
