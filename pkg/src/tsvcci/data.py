"""Datasets, CSV ingestion and person-period expansion for discrete hazards."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .glm import Family

__all__ = [
    "Dataset",
    "DataError",
    "SurvivalSchema",
    "infer_kind",
    "load_csv",
    "read_table",
    "expand_discrete_hazard",
]

KINDS = ("continuous", "binary", "ordinal")


class DataError(ValueError):
    """Invalid input data. `row` is 1-based (header excluded) when known."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


def infer_kind(values) -> str:
    values = np.asarray(values, dtype=float)
    if np.all((values == 0.0) | (values == 1.0)):
        return "binary"
    return "continuous"


@dataclass(frozen=True)
class Dataset:
    """Outcome vector plus an (n, p) covariate matrix with column metadata."""

    outcome: np.ndarray
    covariates: np.ndarray
    names: tuple = ()
    kinds: tuple = ()
    outcome_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.outcome, dtype=float)
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DataError("outcome must be (n,) and covariates (n, p)")
        n, p = x.shape
        if n < 2 or p < 1:
            raise DataError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DataError("missing or non-finite values")
        names = tuple(self.names) or tuple(f"X{j + 1}" for j in range(p))
        if len(names) != p or len(set(names)) != p:
            raise DataError("column names must be unique, one per covariate")
        kinds = tuple(self.kinds) or tuple(infer_kind(x[:, j]) for j in range(p))
        if len(kinds) != p or any(k not in KINDS for k in kinds):
            raise DataError(f"column kinds must be one of {KINDS}")
        for j, kind in enumerate(kinds):
            if kind == "binary" and not np.all((x[:, j] == 0) | (x[:, j] == 1)):
                raise DataError("binary column holds values other than 0/1", column=names[j])
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "kinds", kinds)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def index(self, name) -> int:
        """Column index of a covariate given by name or index."""
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.p:
                raise KeyError(name)
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown covariate {name!r}") from None

    def check_family(self, family):
        if Family.parse(family) is Family.BINOMIAL:
            if not np.all((self.outcome == 0) | (self.outcome == 1)):
                raise DataError("binomial outcome must contain only 0/1", column=self.outcome_name)

    def with_outcome(self, outcome) -> "Dataset":
        return Dataset(outcome, self.covariates, self.names, self.kinds, self.outcome_name)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.outcome[rows], self.covariates[rows], self.names,
                       self.kinds, self.outcome_name)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.covariates, columns=list(self.names))
        frame.insert(0, self.outcome_name, self.outcome)
        return frame


def read_table(path) -> pd.DataFrame:
    """Read a header-first CSV into a float frame with cell-level diagnostics."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"empty file: {path}") from None
    if raw.shape[0] == 0:
        raise DataError(f"no data rows in {path}")
    out = {}
    for col in raw.columns:
        values = np.empty(raw.shape[0])
        for i, cell in enumerate(raw[col]):
            try:
                values[i] = float(cell)
            except ValueError:
                values[i] = np.nan
            if not np.isfinite(values[i]):
                raise DataError(f"missing or malformed numeric cell {cell!r}", row=i + 1, column=col)
        out[col] = values
    return pd.DataFrame(out)


def load_csv(path, outcome="y", covariates=None, kinds=None) -> Dataset:
    """Load a Dataset from CSV.

    Parameters
    ----------
    path : path-like
    outcome : str
        Outcome column name.
    covariates : sequence of str, optional
        Covariate columns, default all columns other than the outcome.
    kinds : mapping of str to str, optional
        Override inferred column kinds (e.g. ``{"stage": "ordinal"}``).
    """
    frame = read_table(path)
    return dataset_from_frame(frame, outcome, covariates, kinds)


def dataset_from_frame(frame, outcome="y", covariates=None, kinds=None) -> Dataset:
    if outcome not in frame.columns:
        raise DataError("missing outcome column", column=outcome)
    if covariates is None:
        covariates = [c for c in frame.columns if c != outcome]
    for c in covariates:
        if c not in frame.columns:
            raise DataError("missing covariate column", column=c)
    kinds = dict(kinds or {})
    x = frame[list(covariates)].to_numpy(dtype=float)
    col_kinds = tuple(kinds.get(c, infer_kind(x[:, j])) for j, c in enumerate(covariates))
    return Dataset(frame[outcome].to_numpy(dtype=float), x, tuple(covariates), col_kinds, outcome)


@dataclass(frozen=True)
class SurvivalSchema:
    time_column: str
    event_column: str
    covariates: tuple = field(default=None)


def expand_discrete_hazard(table, schema: SurvivalSchema, time_name="t", indicator_prefix="T"):
    """Expand subject-level discrete survival data into person-period rows.

    Subject i with observed time t_i contributes one row per period
    1..t_i; the binary outcome is 1 only in period t_i and only if the event
    was observed. Censored subjects contribute non-event rows for all of
    their observed periods, the final one included.

    Parameters
    ----------
    table : DataFrame or mapping of column name to array
    schema : SurvivalSchema
    time_name : str
        Name of the appended integer period column.
    indicator_prefix : str
        Prefix of the k - 1 period dummies for periods 2..k (period 1 is the
        reference absorbed by the intercept).

    Returns
    -------
    dataset : Dataset
        Binary outcome ``event``; covariates are the subject covariates, the
        period column and the period dummies, in that order.
    info : dict
        ``subject`` (source row per expanded row), ``time_column``,
        ``indicator_columns`` and ``covariate_columns`` names.
    """
    frame = pd.DataFrame(table)
    for c in (schema.time_column, schema.event_column):
        if c not in frame.columns:
            raise DataError("missing survival column", column=c)
    times = frame[schema.time_column].to_numpy(dtype=float)
    events = frame[schema.event_column].to_numpy(dtype=float)
    for i, (t, d) in enumerate(zip(times, events)):
        if not (np.isfinite(t) and t >= 1 and t == np.floor(t)):
            raise DataError(f"event time must be a positive integer, got {t}", row=i + 1,
                            column=schema.time_column)
        if d not in (0.0, 1.0):
            raise DataError(f"event flag must be 0 or 1, got {d}", row=i + 1,
                            column=schema.event_column)
    if schema.covariates is None:
        cov_cols = [c for c in frame.columns if c not in (schema.time_column, schema.event_column)]
    else:
        cov_cols = list(schema.covariates)
    times = times.astype(int)
    subject = np.repeat(np.arange(len(times)), times)
    offsets = np.cumsum(times) - times
    period = np.arange(subject.size) - np.repeat(offsets, times) + 1
    last = period == times[subject]
    y = (last & (events[subject] == 1)).astype(float)

    k = int(times.max())
    x_cov = frame[cov_cols].to_numpy(dtype=float)[subject] if cov_cols else np.empty((subject.size, 0))
    indicator_cols = [f"{indicator_prefix}{t}" for t in range(2, k + 1)]
    dummies = (period[:, None] == np.arange(2, k + 1)[None, :]).astype(float)
    x = np.column_stack([x_cov, period.astype(float), dummies])
    names = tuple(cov_cols) + (time_name,) + tuple(indicator_cols)
    cov_kinds = tuple(infer_kind(x[:, j]) for j in range(len(cov_cols)))
    kinds = cov_kinds + ("ordinal",) + ("binary",) * len(indicator_cols)
    dataset = Dataset(y, x, names, kinds, outcome_name="event")
    info = {
        "subject": subject,
        "time_column": time_name,
        "indicator_columns": indicator_cols,
        "covariate_columns": cov_cols,
    }
    return dataset, info
