"""Compile a study into a binary linear program for maximum-cardinality balanced selection.

Variables are one indicator per exposed unit (``a_t``) followed by one per
unexposed unit (``b_c``), both in dataset order. Every constraint row is
homogeneous (right-hand side 0) except the optional ``min_pairs`` row, so the
empty selection is always feasible without it.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import StudySpec
from .data import Dataset, build_strata
from .errors import ConfigError, EmptyProblem, MissingTargetMean, UnknownColumn

EQ, LE = 0, 1

VERIFY_TOL = 1e-9


@dataclass(frozen=True)
class TargetProfile:
    names: tuple[str, ...]
    means: np.ndarray  # raw units
    standardized: np.ndarray
    source: str


@dataclass(frozen=True)
class BalanceSpec:
    group_tolerance: np.ndarray  # delta_k, SD units
    target_tolerance: np.ndarray | None = None  # epsilon_k, None when no target profile
    group_balance: bool = True
    min_pairs: int | None = None

    def __post_init__(self):
        if np.any(self.group_tolerance < 0):
            raise ConfigError("group tolerances must be nonnegative")
        if self.target_tolerance is not None and np.any(self.target_tolerance < 0):
            raise ConfigError("target tolerances must be nonnegative")


@dataclass(frozen=True, eq=False)
class SelectionProblem:
    """maximize c @ x  s.t.  A[EQ rows] @ x == b,  A[LE rows] @ x <= b,  0 <= x <= upper, x binary."""

    A: np.ndarray
    b: np.ndarray
    sense: np.ndarray
    row_names: tuple[str, ...]
    c: np.ndarray
    upper: np.ndarray
    var_ids: tuple[str, ...]
    var_unit: np.ndarray  # dataset index of each variable
    n_treated: int
    strata: tuple[tuple[tuple[str, ...], np.ndarray, np.ndarray], ...]  # (key, treated vars, control vars)
    covariate_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def is_treated_var(self, j) -> np.ndarray:
        return np.asarray(j) < self.n_treated

    def vector(self, treated_ids: Sequence[str], control_ids: Sequence[str]) -> np.ndarray:
        """0/1 assignment vector for a selection given by unit ids."""
        pos = {uid: j for j, uid in enumerate(self.var_ids)}
        x = np.zeros(self.n_vars)
        for uid in treated_ids:
            j = pos[uid]
            if j >= self.n_treated:
                raise ValueError(f"{uid!r} is not an exposed unit")
            x[j] = 1.0
        for uid in control_ids:
            j = pos[uid]
            if j < self.n_treated:
                raise ValueError(f"{uid!r} is not an unexposed unit")
            x[j] = 1.0
        return x

    def selection_ids(self, x: np.ndarray) -> tuple[list[str], list[str]]:
        on = np.flatnonzero(np.asarray(x) > 0.5)
        t = [self.var_ids[j] for j in on if j < self.n_treated]
        c = [self.var_ids[j] for j in on if j >= self.n_treated]
        return t, c

    def restrict(self, cols: np.ndarray) -> "SelectionProblem":
        """The same rows over a subset of the variables (exposed ones stay first)."""
        cols = np.sort(np.asarray(cols, dtype=int))
        new = np.full(self.n_vars, -1)
        new[cols] = np.arange(len(cols))
        strata = tuple((key, new[tv][new[tv] >= 0], new[cv][new[cv] >= 0]) for key, tv, cv in self.strata)
        return SelectionProblem(
            A=self.A[:, cols],
            b=self.b,
            sense=self.sense,
            row_names=self.row_names,
            c=self.c[cols],
            upper=self.upper[cols],
            var_ids=tuple(self.var_ids[j] for j in cols),
            var_unit=self.var_unit[cols],
            n_treated=int(np.sum(cols < self.n_treated)),
            strata=strata,
            covariate_names=self.covariate_names,
            meta=dict(self.meta),
        )

    def trivial_bound(self) -> int:
        """Sum of per-stratum capacities: optimum with every balance row dropped."""
        return int(sum(min(len(t), len(c)) for _, t, c in self.strata))


def _read_aggregate(path: Path) -> dict[str, float]:
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(doc, dict) and "means" in doc:
            doc = doc["means"]
        return {str(k): float(v) for k, v in doc.items()}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for row in rows:
        if "covariate" not in row or "mean" not in row:
            raise UnknownColumn("covariate/mean")
        out[row["covariate"].strip()] = float(row["mean"])
    return out


def derive_target_profile(source, dataset: Dataset) -> TargetProfile:
    """Target means from 'treated', 'full', another Dataset, a {name: mean} mapping, or an aggregate file."""
    names = dataset.schema.names
    if isinstance(source, str) and source in ("treated", "full"):
        rows = dataset.exposed if source == "treated" else np.ones(len(dataset), dtype=bool)
        means = dataset.raw[rows].mean(axis=0)
        label = f"{source}-sample"
    else:
        if isinstance(source, Dataset):
            lookup = dict(zip(source.schema.names, source.raw.mean(axis=0)))
            label = "external-dataset"
        elif isinstance(source, Mapping):
            lookup, label = dict(source), "external-aggregate"
        else:
            lookup, label = _read_aggregate(Path(source)), "external-aggregate-file"
        missing = [n for n in names if n not in lookup]
        if missing:
            raise MissingTargetMean(missing[0])
        means = np.array([float(lookup[n]) for n in names])
    if not np.all(np.isfinite(means)):
        raise ConfigError("target means must be finite")
    return TargetProfile(tuple(names), means, dataset.schema.standardize(means), label)


def balance_spec_for(spec: StudySpec, dataset: Dataset) -> BalanceSpec:
    cov = spec.covariates
    names = dataset.schema.names

    def base(name):
        # one-hot indicators inherit the tolerance of their source column
        return name.split("=", 1)[0] if name not in cov.tolerance else name

    delta = np.array([cov.tolerance_for(base(n)) for n in names])
    eps = None
    if spec.target is not None:
        eps = np.array([spec.target.tolerance_for(base(n)) for n in names])
    for name, key in [(n, "covariates") for n in cov.tolerance] + [
        (n, "target") for n in (spec.target.tolerance if spec.target else {})
    ]:
        if name not in names and not any(m.startswith(name + "=") for m in names):
            raise UnknownColumn(name)
    return BalanceSpec(delta, eps, cov.group_balance, cov.min_pairs)


def compile_problem(
    dataset: Dataset,
    spec: StudySpec | BalanceSpec,
    target: TargetProfile | None = None,
) -> SelectionProblem:
    """Build the selection program.

    Rows: one equality per exact-match stratum, then two group-balance rows per
    covariate (when enabled), then four target rows per covariate (when a
    target profile is given), then the optional min-pairs row.
    """
    if isinstance(spec, StudySpec):
        balance = balance_spec_for(spec, dataset)
        if spec.target is not None and target is None:
            src = spec.target.path if spec.target.source == "file" else spec.target.source
            target = derive_target_profile(src, dataset)
    else:
        balance = spec
    if target is not None and balance.target_tolerance is None:
        balance = BalanceSpec(balance.group_tolerance, np.full(len(balance.group_tolerance), 0.1),
                              balance.group_balance, balance.min_pairs)

    X = dataset.X
    K = X.shape[1]
    t_idx, c_idx = dataset.treated_idx, dataset.control_idx
    nT, nC = len(t_idx), len(c_idx)
    nv = nT + nC
    var_unit = np.concatenate([t_idx, c_idx])
    Xt, Xc = X[t_idx], X[c_idx]

    strata = build_strata(dataset)
    if not any(not s.zero_capacity for s in strata):
        raise EmptyProblem()
    t_pos = np.empty(len(dataset), dtype=int)
    t_pos[t_idx] = np.arange(nT)
    t_pos[c_idx] = nT + np.arange(nC)

    rows, names, senses, rhs = [], [], [], []
    upper = np.ones(nv)
    strata_vars = []
    for s in strata:
        tv, cv = t_pos[s.treated], t_pos[s.control]
        row = np.zeros(nv)
        row[tv] = 1.0
        row[cv] = -1.0
        rows.append(row)
        names.append("stratum[" + "|".join(s.key) + "]")
        senses.append(EQ)
        rhs.append(0.0)
        if s.zero_capacity:
            upper[tv] = 0.0
            upper[cv] = 0.0
        strata_vars.append((s.key, tv, cv))

    cov_names = dataset.schema.names
    ones_t = np.concatenate([np.ones(nT), np.zeros(nC)])
    ones_c = np.concatenate([np.zeros(nT), np.ones(nC)])
    if balance.group_balance:
        for k in range(K):
            diff = np.concatenate([Xt[:, k], -Xc[:, k]])
            d = balance.group_tolerance[k]
            rows.append(diff - d * ones_t)
            names.append(f"group[{cov_names[k]}]+")
            rows.append(-diff - d * ones_t)
            names.append(f"group[{cov_names[k]}]-")
            senses += [LE, LE]
            rhs += [0.0, 0.0]
    if target is not None:
        tau = target.standardized
        for k in range(K):
            e = balance.target_tolerance[k]
            dev_t = np.concatenate([Xt[:, k] - tau[k], np.zeros(nC)])
            dev_c = np.concatenate([np.zeros(nT), Xc[:, k] - tau[k]])
            for label, dev, ones in (("treated", dev_t, ones_t), ("control", dev_c, ones_c)):
                rows.append(dev - e * ones)
                names.append(f"target[{cov_names[k]}].{label}+")
                rows.append(-dev - e * ones)
                names.append(f"target[{cov_names[k]}].{label}-")
                senses += [LE, LE]
                rhs += [0.0, 0.0]
    if balance.min_pairs:
        rows.append(-ones_t)
        names.append("min_pairs")
        senses.append(LE)
        rhs.append(-float(balance.min_pairs))

    A = np.vstack(rows) if rows else np.zeros((0, nv))
    for arr in (A,):
        arr.setflags(write=False)
    return SelectionProblem(
        A=A,
        b=np.array(rhs),
        sense=np.array(senses, dtype=int),
        row_names=tuple(names),
        c=ones_t.copy(),
        upper=upper,
        var_ids=tuple(dataset.ids[i] for i in var_unit),
        var_unit=var_unit,
        n_treated=nT,
        strata=tuple(strata_vars),
        covariate_names=tuple(cov_names),
        meta={
            "group_tolerance": balance.group_tolerance.tolist(),
            "target_tolerance": None if balance.target_tolerance is None or target is None
            else balance.target_tolerance.tolist(),
            "target_source": None if target is None else target.source,
        },
    )


@dataclass(frozen=True)
class FeasibilityReport:
    passed: bool
    n: int
    slacks: tuple[float, ...]
    violations: tuple[tuple[str, float], ...]

    def __bool__(self):
        return self.passed


def row_slacks(problem: SelectionProblem, x: np.ndarray) -> np.ndarray:
    """b - A x per row, each sum accumulated with math.fsum; equality rows report -|residual|."""
    x = np.asarray(x, dtype=float)
    on = np.flatnonzero(x != 0)
    out = np.empty(problem.n_rows)
    for i in range(problem.n_rows):
        lhs = math.fsum((problem.A[i, on] * x[on]).tolist())
        r = problem.b[i] - lhs
        out[i] = -abs(r) if problem.sense[i] == EQ else r
    return out


def verify_solution(problem: SelectionProblem, solution) -> FeasibilityReport:
    """Re-evaluate every row from scratch for a MatchSolution or a 0/1 vector."""
    if hasattr(solution, "treated_ids"):
        x = problem.vector(solution.treated_ids, solution.control_ids)
    else:
        x = np.asarray(solution, dtype=float)
    if x.shape != (problem.n_vars,) or not np.all((x == 0) | (x == 1)):
        raise ValueError("solution must be a complete binary assignment")
    slacks = row_slacks(problem, x)
    bad = [(problem.row_names[i], float(s)) for i, s in enumerate(slacks) if s < -VERIFY_TOL]
    over = np.flatnonzero(x > problem.upper)
    bad += [(f"fixed[{problem.var_ids[j]}]", -1.0) for j in over]
    n = int(round(x[: problem.n_treated].sum()))
    return FeasibilityReport(not bad, n, tuple(map(float, slacks)), tuple(bad))
