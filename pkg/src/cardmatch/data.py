"""Loading, validating, standardizing and stratifying unit-level data."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import CovariateConfig, StudySpec
from .errors import (
    ConstantCovariate,
    DuplicateId,
    MissingValue,
    NonBinaryExposure,
    UnknownColumn,
)


@dataclass(frozen=True)
class Unit:
    id: str
    exposed: bool
    covariates: tuple[float, ...]
    exact_keys: tuple[str, ...]
    outcome: float | None = None


@dataclass(frozen=True)
class CovariateSchema:
    names: tuple[str, ...]  # balance covariates, in column order of `Dataset.raw`
    exact: tuple[str, ...] = ()
    ignore: tuple[str, ...] = ()
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sd: np.ndarray = field(default_factory=lambda: np.ones(0))

    @property
    def roles(self) -> dict[str, str]:
        out = {n: "balance" for n in self.names}
        out.update({n: "exact" for n in self.exact})
        out.update({n: "ignore" for n in self.ignore})
        return out

    def standardize(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.sd


@dataclass(frozen=True)
class Stratum:
    key: tuple[str, ...]
    treated: np.ndarray  # unit indices
    control: np.ndarray

    @property
    def capacity(self) -> int:
        return min(len(self.treated), len(self.control))

    @property
    def zero_capacity(self) -> bool:
        return self.capacity == 0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of units; covariate arrays are (n_units, n_balance)."""

    ids: tuple[str, ...]
    exposed: np.ndarray
    raw: np.ndarray
    schema: CovariateSchema
    exact_keys: tuple[tuple[str, ...], ...]
    outcome: np.ndarray | None = None
    X: np.ndarray | None = None  # standardized covariates

    def __post_init__(self):
        for arr in (self.exposed, self.raw, self.X, self.outcome):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self):
        return len(self.ids)

    @property
    def treated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.exposed)

    @property
    def control_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.exposed)

    @property
    def units(self) -> list[Unit]:
        X = self.X if self.X is not None else self.raw
        out = []
        for i, uid in enumerate(self.ids):
            y = None if self.outcome is None else float(self.outcome[i])
            out.append(Unit(uid, bool(self.exposed[i]), tuple(map(float, X[i])), self.exact_keys[i], y))
        return out

    @property
    def strata(self) -> list[Stratum]:
        return build_strata(self, warn=False)

    def index_of(self) -> dict[str, int]:
        return {uid: i for i, uid in enumerate(self.ids)}


def _parse_float(text: str, row: int, column: str) -> float:
    if text is None or text.strip() == "":
        raise MissingValue(row, column)
    try:
        value = float(text)
    except ValueError:
        raise MissingValue(row, column) from None
    if math.isnan(value):
        raise MissingValue(row, column)
    return value


def _read_rows(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise UnknownColumn("id")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        rows = list(reader)
    return header, rows


def dataset_from_rows(
    header: Sequence[str],
    rows: Sequence[dict[str, str]],
    cov: CovariateConfig,
    outcome_column: str = "outcome",
) -> Dataset:
    """Validate raw string rows against a covariate config and build a Dataset."""
    id_col, exp_col = cov.id_column, cov.exposure_column
    for name in (id_col, exp_col, *cov.balance, *cov.exact, *cov.one_hot):
        if name not in header:
            raise UnknownColumn(name)

    ids: list[str] = []
    seen: set[str] = set()
    exposed = np.zeros(len(rows), dtype=bool)
    for r, row in enumerate(rows, start=1):
        uid = (row.get(id_col) or "").strip()
        if not uid:
            raise MissingValue(r, id_col)
        if uid in seen:
            raise DuplicateId(uid)
        seen.add(uid)
        ids.append(uid)
        e = (row.get(exp_col) or "").strip()
        if e == "":
            raise MissingValue(r, exp_col)
        if e not in ("0", "1"):
            raise NonBinaryExposure(r, e)
        exposed[r - 1] = e == "1"

    names = list(cov.balance)
    columns = [[_parse_float(row.get(n), r, n) for r, row in enumerate(rows, start=1)] for n in names]
    for name in cov.one_hot:
        labels = []
        for r, row in enumerate(rows, start=1):
            v = (row.get(name) or "").strip()
            if not v:
                raise MissingValue(r, name)
            labels.append(v)
        for level in sorted(set(labels)):
            names.append(f"{name}={level}")
            columns.append([1.0 if v == level else 0.0 for v in labels])
    raw = np.array(columns, dtype=float).T.reshape(len(rows), len(names))

    keys = []
    for r, row in enumerate(rows, start=1):
        key = []
        for name in cov.exact:
            v = (row.get(name) or "").strip()
            if not v:
                raise MissingValue(r, name)
            key.append(v)
        keys.append(tuple(key))

    outcome = None
    # outcome is optional; only validated when the column is present
    if outcome_column in header:
        outcome = np.array([_parse_float(row.get(outcome_column), r, outcome_column)
                            for r, row in enumerate(rows, start=1)])

    ignore = tuple(h for h in header if h not in (id_col, exp_col, outcome_column, *names,
                                                    *cov.exact, *cov.one_hot))
    schema = CovariateSchema(tuple(names), tuple(cov.exact), ignore)
    ds = Dataset(tuple(ids), exposed, raw, schema, tuple(keys), outcome)
    return standardize(ds)


def load_dataset(path: str | Path, config: StudySpec | CovariateConfig) -> Dataset:
    """Read a CSV file (header row, ``id``, ``exposed`` columns) into a standardized Dataset."""
    if isinstance(config, StudySpec):
        cov, outcome_column = config.covariates, config.outcome.column
    else:
        cov, outcome_column = config, "outcome"
    header, rows = _read_rows(path)
    return dataset_from_rows(header, rows, cov, outcome_column)


def pooled_sd(values: np.ndarray, exposed: np.ndarray) -> np.ndarray:
    """sqrt((s_T^2 + s_C^2) / 2) with n-1 group variances, column-wise.

    A group with fewer than two units contributes zero variance.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]

    def var(block):
        if block.shape[0] < 2:
            return np.zeros(block.shape[1])
        return block.var(axis=0, ddof=1)

    return np.sqrt((var(values[exposed]) + var(values[~exposed])) / 2.0)


def standardize(dataset: Dataset) -> Dataset:
    """Recompute (x - full-sample mean) / pooled SD for every balance covariate."""
    raw = dataset.raw
    if raw.shape[1] == 0:
        return replace(dataset, X=raw.copy())
    mean = raw.mean(axis=0)
    sd = pooled_sd(raw, dataset.exposed)
    scale = np.maximum(np.abs(mean), 1.0)
    for name, s, m in zip(dataset.schema.names, sd, scale):
        # relative guard so float noise in a constant column does not pass
        if not s > 1e-12 * m:
            raise ConstantCovariate(name)
    schema = replace(dataset.schema, mean=mean, sd=sd)
    return replace(dataset, schema=schema, X=(raw - mean) / sd)


def build_strata(dataset: Dataset, warn: bool = True) -> list[Stratum]:
    """Group units by exact-key tuple, in order of first appearance."""
    groups: dict[tuple[str, ...], list[int]] = {}
    for i, key in enumerate(dataset.exact_keys):
        groups.setdefault(key, []).append(i)
    out = []
    for key, idx in groups.items():
        idx = np.asarray(idx, dtype=int)
        mask = dataset.exposed[idx]
        s = Stratum(key, idx[mask], idx[~mask])
        if warn and s.zero_capacity:
            warnings.warn(
                f"stratum {key!r} has {len(s.treated)} exposed and {len(s.control)} "
                "unexposed units; no pairs can form there",
                stacklevel=2,
            )
        out.append(s)
    return out


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the dataset back to CSV with round-trip float formatting."""
    header = ["id", "exposed", *dataset.schema.names, *dataset.schema.exact]
    if dataset.outcome is not None:
        header.append("outcome")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, uid in enumerate(dataset.ids):
            row = [uid, "1" if dataset.exposed[i] else "0"]
            row += [repr(float(v)) for v in dataset.raw[i]]
            row += list(dataset.exact_keys[i])
            if dataset.outcome is not None:
                row.append(_fmt_outcome(dataset.outcome[i]))
            w.writerow(row)


def _fmt_outcome(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def make_dataset(
    ids: Sequence[str],
    exposed: Sequence[bool],
    covariates: np.ndarray,
    names: Sequence[str] | None = None,
    exact_keys: Sequence[tuple[str, ...]] | None = None,
    outcome: Sequence[float] | None = None,
    exact_names: Sequence[str] = (),
) -> Dataset:
    """Build a standardized Dataset from in-memory arrays (used by tests and generators)."""
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    n = len(ids)
    if len(set(ids)) != n:
        dup = next(i for i in ids if list(ids).count(i) > 1)
        raise DuplicateId(dup)
    if names is None:
        names = [f"x{k}" for k in range(covariates.shape[1])]
    if exact_keys is None:
        exact_keys = [()] * n
    if np.isnan(covariates).any():
        r, c = np.argwhere(np.isnan(covariates))[0]
        raise MissingValue(int(r) + 1, names[c])
    schema = CovariateSchema(tuple(names), tuple(exact_names))
    ds = Dataset(
        tuple(map(str, ids)),
        np.asarray(exposed, dtype=bool).copy(),
        covariates.copy().reshape(n, len(names)),
        schema,
        tuple(tuple(k) for k in exact_keys),
        None if outcome is None else np.asarray(outcome, dtype=float).copy(),
    )
    return standardize(ds)
