"""Panel data container and CSV ingestion.

The on-disk format is long: one row per person-occasion with columns
``id``, ``t`` (1-based, contiguous), ``avail`` (0/1), ``trt`` (0/1),
``y`` (the response observed after the occasion-``t`` treatment, so the
row at occasion t stores Y_{t+1}), plus free-form numeric covariate
columns. In memory everything is columnar: (n, T) float arrays, one per
column, with individuals ordered by first appearance in the file.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import InvariantViolation, MissingColumn, ParseError, RaggedPanel

_RESERVED = ("id", "t", "avail", "trt", "y")


class IndividualSeries:
    """Read-only view of one individual's T occasions."""

    __slots__ = ("id", "avail", "trt", "y", "covariates")

    def __init__(self, ident, avail, trt, y, covariates):
        self.id = ident
        self.avail = avail
        self.trt = trt
        self.y = y
        self.covariates = covariates

    def __repr__(self):
        return f"IndividualSeries(id={self.id!r}, T={self.avail.shape[0]})"


class PanelDataset:
    """A complete balanced panel of n individuals over T occasions.

    Arrays are (n, T) float64 and immutable after construction. The
    response array stores, at occasion index t, the outcome measured
    after that occasion's treatment.
    """

    def __init__(self, ids, avail, trt, y, covariates=None):
        avail = np.ascontiguousarray(avail, dtype=np.float64)
        trt = np.ascontiguousarray(trt, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        covariates = {
            str(k): np.ascontiguousarray(v, dtype=np.float64)
            for k, v in (covariates or {}).items()
        }
        if avail.ndim != 2:
            raise InvariantViolation("availability array must be 2-d (n, T)")
        n, T = avail.shape
        if n < 1 or T < 1:
            raise InvariantViolation("panel needs n >= 1 individuals and T >= 1 occasions")
        if len(ids) != n:
            raise InvariantViolation(f"{len(ids)} ids for {n} individuals")
        for name, arr in [("trt", trt), ("y", y)] + sorted(covariates.items()):
            if arr.shape != (n, T):
                raise InvariantViolation(
                    f"column {name!r} has shape {arr.shape}, expected {(n, T)}"
                )
        for name, arr in [("avail", avail), ("trt", trt), ("y", y)] + sorted(
            covariates.items()
        ):
            if not np.all(np.isfinite(arr)):
                raise InvariantViolation(f"column {name!r} contains missing or non-finite values")
        for name, arr in (("avail", avail), ("trt", trt)):
            if not np.all((arr == 0.0) | (arr == 1.0)):
                raise InvariantViolation(f"column {name!r} must be binary 0/1")
        if np.any((avail == 0.0) & (trt == 1.0)):
            raise InvariantViolation("treatment delivered at an unavailable occasion")

        self._ids = tuple(ids)
        self._positions = {ident: i for i, ident in enumerate(self._ids)}
        if len(self._positions) != n:
            raise InvariantViolation("duplicate individual ids")
        self._avail = avail
        self._trt = trt
        self._y = y
        self._covariates = covariates
        for arr in (avail, trt, y, *covariates.values()):
            arr.flags.writeable = False

    @property
    def n(self):
        return self._avail.shape[0]

    @property
    def T(self):
        return self._avail.shape[1]

    @property
    def ids(self):
        return self._ids

    @property
    def schema(self):
        """Covariate column names, sorted."""
        return tuple(sorted(self._covariates))

    @property
    def avail(self):
        return self._avail

    @property
    def trt(self):
        return self._trt

    @property
    def y(self):
        return self._y

    def covariate(self, name):
        if name not in self._covariates:
            raise MissingColumn(f"no covariate column {name!r}; have {self.schema}")
        return self._covariates[name]

    @property
    def individuals(self):
        return [self._view(i) for i in range(self.n)]

    def __len__(self):
        return self.n

    def __getitem__(self, ident):
        """Look up one individual by id."""
        if ident not in self._positions:
            raise KeyError(f"no individual with id {ident!r}")
        return self._view(self._positions[ident])

    def _view(self, i):
        return IndividualSeries(
            self._ids[i],
            self._avail[i],
            self._trt[i],
            self._y[i],
            {k: v[i] for k, v in self._covariates.items()},
        )

    def __repr__(self):
        return f"PanelDataset(n={self.n}, T={self.T}, covariates={list(self.schema)})"


def write_csv(data, path):
    """Write a PanelDataset back to the long CSV format ingest_csv reads."""
    n, T = data.n, data.T
    frame = {
        "id": np.repeat(np.asarray(data.ids, dtype=object), T),
        "t": np.tile(np.arange(1, T + 1), n),
        "avail": data.avail.reshape(-1),
        "trt": data.trt.reshape(-1),
        "y": data.y.reshape(-1),
    }
    for name in data.schema:
        frame[name] = data.covariate(name).reshape(-1)
    pd.DataFrame(frame).to_csv(path, index=False)


def ingest_csv(path, schema=None):
    """Read a long-format CSV into a validated PanelDataset.

    Args:
        path: CSV file with a header row.
        schema: optional mapping from the logical names ``id``, ``t``,
            ``avail``, ``trt``, ``y`` to the file's column names, plus an
            optional ``covariates`` list naming which extra columns to
            keep. Defaults to the logical names themselves and every
            remaining column as a covariate.

    Raises:
        MissingColumn: a mapped or requested column is absent.
        ParseError: a non-numeric cell where a number is required.
        RaggedPanel: individuals with differing T or gaps in t.
        InvariantViolation: non-binary avail/trt, treatment while
            unavailable, or missing cells.
    """
    schema = dict(schema or {})
    colmap = {name: schema.get(name, name) for name in _RESERVED}
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed CSV {path}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]

    for logical, column in colmap.items():
        if column not in frame.columns:
            raise MissingColumn(f"column {column!r} (for {logical!r}) not found in {path}")
    if "covariates" in schema:
        covariate_cols = list(schema["covariates"])
        for column in covariate_cols:
            if column not in frame.columns:
                raise MissingColumn(f"covariate column {column!r} not found in {path}")
    else:
        used = set(colmap.values())
        covariate_cols = [c for c in frame.columns if c not in used]

    def numeric(column):
        raw = frame[column]
        if raw.isna().any():
            raise InvariantViolation(f"column {column!r} has missing cells")
        values = pd.to_numeric(raw, errors="coerce")
        if values.isna().any():
            bad = raw[values.isna()].iloc[0]
            raise ParseError(f"non-numeric value {bad!r} in column {column!r}")
        return values.to_numpy(dtype=np.float64)

    t_values = numeric(colmap["t"])
    id_raw = frame[colmap["id"]]
    if id_raw.isna().any():
        raise InvariantViolation(f"column {colmap['id']!r} has missing cells")

    ids = []
    positions = {}
    for ident in id_raw:
        if ident not in positions:
            positions[ident] = len(ids)
            ids.append(ident)
    n = len(ids)

    counts = id_raw.value_counts()
    T = int(counts.iloc[0])
    if counts.nunique() != 1:
        raise RaggedPanel(f"individuals have differing occasion counts: {sorted(set(counts))}")
    if len(frame) != n * T:
        raise RaggedPanel("row count is not n * T")

    order = np.lexsort((t_values, np.array([positions[i] for i in id_raw])))
    t_sorted = t_values[order].reshape(n, T)
    expected = np.arange(1, T + 1, dtype=np.float64)
    if not np.array_equal(t_sorted, np.broadcast_to(expected, (n, T))):
        raise RaggedPanel("occasions must cover t = 1..T contiguously for every individual")

    def column_2d(column):
        return numeric(column)[order].reshape(n, T)

    return PanelDataset(
        ids,
        column_2d(colmap["avail"]),
        column_2d(colmap["trt"]),
        column_2d(colmap["y"]),
        {c: column_2d(c) for c in covariate_cols},
    )
