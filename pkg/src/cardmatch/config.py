"""Study configuration: a JSON document with five sections.

    {
      "covariates": {"balance": [...], "exact": [...], "ignore": [...],
                     "one_hot": [...], "tolerance": 0.1 | {name: tol},
                     "group_balance": true, "min_pairs": null,
                     "id_column": "id", "exposure_column": "exposed"},
      "target":  {"source": "treated" | "full" | "file", "path": null,
                  "tolerance": 0.1 | {name: tol}},
      "solver":  {"time_limit_s": 600, "gap_abs": 0, "threads": 1, "seed": 0},
      "pairing": {"metric": "standardized_l1"},
      "outcome": {"column": "outcome", "test": "mcnemar",
                  "continuity_correction": false}
    }

Only ``covariates`` is required. Omitting ``target`` (or setting it to
null) compiles a program with group-to-group balance rows only. Any key not
listed above is rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, ConfigSyntaxError, InvalidTolerance, UnknownKey

DEFAULT_TOLERANCE = 0.1

METRICS = ("standardized_l1", "standardized_l2")
TESTS = ("ztest", "mcnemar", "paired-t")
TARGET_SOURCES = ("treated", "full", "file")


@dataclass(frozen=True)
class CovariateConfig:
    balance: tuple[str, ...] = ()
    exact: tuple[str, ...] = ()
    ignore: tuple[str, ...] = ()
    one_hot: tuple[str, ...] = ()
    # per-covariate group tolerance (SD units); names absent here get `default_tolerance`
    tolerance: Mapping[str, float] = field(default_factory=dict)
    default_tolerance: float = DEFAULT_TOLERANCE
    group_balance: bool = True
    min_pairs: int | None = None
    id_column: str = "id"
    exposure_column: str = "exposed"

    def tolerance_for(self, name: str) -> float:
        return float(self.tolerance.get(name, self.default_tolerance))


@dataclass(frozen=True)
class TargetConfig:
    source: str = "treated"
    path: str | None = None
    tolerance: Mapping[str, float] = field(default_factory=dict)
    default_tolerance: float = DEFAULT_TOLERANCE

    def tolerance_for(self, name: str) -> float:
        return float(self.tolerance.get(name, self.default_tolerance))


@dataclass(frozen=True)
class SolverConfig:
    time_limit_s: float = 600.0
    gap_abs: float = 0.0
    threads: int = 1
    seed: int = 0


@dataclass(frozen=True)
class PairingConfig:
    metric: str = "standardized_l1"


@dataclass(frozen=True)
class OutcomeConfig:
    column: str = "outcome"
    test: str = "mcnemar"
    continuity_correction: bool = False


@dataclass(frozen=True)
class StudySpec:
    covariates: CovariateConfig = field(default_factory=CovariateConfig)
    target: TargetConfig | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    pairing: PairingConfig = field(default_factory=PairingConfig)
    outcome: OutcomeConfig = field(default_factory=OutcomeConfig)

    def with_solver(self, **kw) -> "StudySpec":
        return replace(self, solver=replace(self.solver, **kw))

    def to_dict(self) -> dict:
        cov = self.covariates
        out: dict[str, Any] = {
            "covariates": {
                "balance": list(cov.balance),
                "exact": list(cov.exact),
                "ignore": list(cov.ignore),
                "one_hot": list(cov.one_hot),
                "tolerance": _tol_to_json(cov.tolerance, cov.default_tolerance),
                "group_balance": cov.group_balance,
                "min_pairs": cov.min_pairs,
                "id_column": cov.id_column,
                "exposure_column": cov.exposure_column,
            },
            "target": None,
            "solver": {
                "time_limit_s": self.solver.time_limit_s,
                "gap_abs": self.solver.gap_abs,
                "threads": self.solver.threads,
                "seed": self.solver.seed,
            },
            "pairing": {"metric": self.pairing.metric},
            "outcome": {
                "column": self.outcome.column,
                "test": self.outcome.test,
                "continuity_correction": self.outcome.continuity_correction,
            },
        }
        if self.target is not None:
            out["target"] = {
                "source": self.target.source,
                "path": self.target.path,
                "tolerance": _tol_to_json(self.target.tolerance, self.target.default_tolerance),
            }
        return out


def _tol_to_json(tol: Mapping[str, float], default: float):
    if not tol:
        return default
    return {"default": default, **dict(tol)}


_SCHEMA = {
    "covariates": {"balance", "exact", "ignore", "one_hot", "tolerance", "group_balance",
                   "min_pairs", "id_column", "exposure_column"},
    "target": {"source", "path", "tolerance"},
    "solver": {"time_limit_s", "gap_abs", "threads", "seed"},
    "pairing": {"metric"},
    "outcome": {"column", "test", "continuity_correction"},
}


def _check_keys(section: str, body: Any) -> dict:
    if not isinstance(body, dict):
        raise ConfigError(f"section {section!r} must be an object")
    for key in body:
        if key not in _SCHEMA[section]:
            raise UnknownKey(f"{section}.{key}")
    return body


def _names(value, path) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{path} must be a list of column names")
    return tuple(value)


def _tolerance(value, path) -> tuple[dict[str, float], float]:
    def check(name, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
            raise InvalidTolerance(name, v)
        return float(v)

    if value is None:
        return {}, DEFAULT_TOLERANCE
    if isinstance(value, dict):
        per = {k: check(k, v) for k, v in value.items()}
        default = per.pop("default", DEFAULT_TOLERANCE)
        return per, default
    return {}, check(path, value)


def spec_from_dict(doc: Mapping[str, Any]) -> StudySpec:
    if not isinstance(doc, dict):
        raise ConfigError("study config must be a JSON object")
    for key in doc:
        if key not in _SCHEMA:
            raise UnknownKey(key)
    if "covariates" not in doc:
        raise ConfigError("study config requires a 'covariates' section")

    cov = _check_keys("covariates", doc["covariates"])
    tol, default = _tolerance(cov.get("tolerance"), "covariates.tolerance")
    min_pairs = cov.get("min_pairs")
    if min_pairs is not None and (not isinstance(min_pairs, int) or min_pairs < 0):
        raise ConfigError("covariates.min_pairs must be a nonnegative integer")
    covariates = CovariateConfig(
        balance=_names(cov.get("balance"), "covariates.balance"),
        exact=_names(cov.get("exact"), "covariates.exact"),
        ignore=_names(cov.get("ignore"), "covariates.ignore"),
        one_hot=_names(cov.get("one_hot"), "covariates.one_hot"),
        tolerance=tol,
        default_tolerance=default,
        group_balance=bool(cov.get("group_balance", True)),
        min_pairs=min_pairs,
        id_column=cov.get("id_column", "id"),
        exposure_column=cov.get("exposure_column", "exposed"),
    )
    seen: dict[str, str] = {}
    for role in ("balance", "exact", "ignore", "one_hot"):
        for name in getattr(covariates, role):
            if name in seen:
                raise ConfigError(f"column {name!r} assigned both {seen[name]!r} and {role!r} roles")
            seen[name] = role

    target = None
    if doc.get("target") is not None:
        t = _check_keys("target", doc["target"])
        source = t.get("source", "treated")
        if source not in TARGET_SOURCES:
            raise ConfigError(f"target.source must be one of {TARGET_SOURCES}, got {source!r}")
        if source == "file" and not t.get("path"):
            raise ConfigError("target.source 'file' requires target.path")
        ttol, tdefault = _tolerance(t.get("tolerance"), "target.tolerance")
        target = TargetConfig(source=source, path=t.get("path"), tolerance=ttol,
                              default_tolerance=tdefault)

    s = _check_keys("solver", doc.get("solver") or {})
    solver = SolverConfig(
        time_limit_s=float(s.get("time_limit_s", 600.0)),
        gap_abs=float(s.get("gap_abs", 0.0)),
        threads=int(s.get("threads", 1)),
        seed=int(s.get("seed", 0)),
    )
    if solver.time_limit_s <= 0 or solver.gap_abs < 0 or solver.threads < 1:
        raise ConfigError("solver limits must be positive (gap_abs >= 0, threads >= 1)")

    p = _check_keys("pairing", doc.get("pairing") or {})
    pairing = PairingConfig(metric=p.get("metric", "standardized_l1"))
    if pairing.metric not in METRICS:
        raise ConfigError(f"pairing.metric must be one of {METRICS}")

    o = _check_keys("outcome", doc.get("outcome") or {})
    outcome = OutcomeConfig(
        column=o.get("column", "outcome"),
        test=o.get("test", "mcnemar"),
        continuity_correction=bool(o.get("continuity_correction", False)),
    )
    if outcome.test not in TESTS:
        raise ConfigError(f"outcome.test must be one of {TESTS}")

    return StudySpec(covariates, target, solver, pairing, outcome)


def parse_spec(path: str | Path) -> StudySpec:
    """Read a study config file, apply defaults, reject unknown keys."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(exc.lineno, exc.msg) from None
    return spec_from_dict(doc)
