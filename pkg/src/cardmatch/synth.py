"""Synthetic study generators and the desk-scale benchmark.

Every generator draws from PCG64 streams derived with ``SeedSequence(seed,
spawn_key=(k,))``, one stream per entity type, so adding a covariate to one
entity type never shifts the draws of another.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import CovariateConfig, SolverConfig, StudySpec, TargetConfig, spec_from_dict
from .data import Dataset, dataset_from_rows, make_dataset
from .errors import InvalidConfig

# stream ids, one per entity type
NEIGHBORHOOD, EXPOSED, CONTROL, OUTCOME, ASSIGN = range(5)

ETHNICITIES = ("brahmin_chhetri", "hill_janajati", "terai_janajati", "dalit", "newar")
ETHNICITY_P = (0.45, 0.20, 0.15, 0.12, 0.08)
BALANCE = ("female", "education", "nbhd_market_km", "nbhd_health_km", "nbhd_school_share")
EXACT = ("age_cat", "ethnicity")


def stream(seed: int, kind: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(kind,))))


@dataclass(frozen=True)
class ScenarioConfig:
    n_neighborhoods: int = 151
    n_exposed_neighborhoods: int = 15
    n_exposed_individuals: int = 520
    n_young_exposed: int = 197
    # unexposed units per exposed unit within every age x ethnicity cell
    control_factor: float = 4.0
    # exposed-group shifts in SD units
    nbhd_shift: float = 0.25
    education_shift: float = -0.2
    female_shift: float = 0.05
    # outcome risk per (exposure, age group)
    risk: dict = field(default_factory=lambda: {
        "exposed_young": 0.1269, "unexposed_young": 0.0508,
        "exposed_older": 0.0774, "unexposed_older": 0.0681,
    })
    seed: int = 0

    def validate(self) -> None:
        if self.n_young_exposed > self.n_exposed_individuals:
            raise InvalidConfig("n_young_exposed exceeds n_exposed_individuals")
        if self.n_exposed_neighborhoods > self.n_neighborhoods:
            raise InvalidConfig("n_exposed_neighborhoods exceeds n_neighborhoods")
        if self.n_exposed_neighborhoods < 1 or self.n_neighborhoods - self.n_exposed_neighborhoods < 1:
            raise InvalidConfig("need at least one exposed and one unexposed neighborhood")
        if self.n_exposed_individuals < 1 or self.n_young_exposed < 0:
            raise InvalidConfig("exposed counts must be positive")
        if self.control_factor < 1:
            raise InvalidConfig("control_factor must be at least 1")
        for key in ("exposed_young", "unexposed_young", "exposed_older", "unexposed_older"):
            p = self.risk.get(key)
            if p is None or not 0 <= p <= 1:
                raise InvalidConfig(f"risk.{key} must be a probability")

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise InvalidConfig(f"unknown scenario keys: {sorted(extra)}")
        doc = dict(doc)
        if "risk" in doc:
            doc["risk"] = {**cls().risk, **doc["risk"]}
        return cls(**doc)


def _allocate(rng, idx: np.ndarray, p: float) -> np.ndarray:
    """Exactly round(p * len(idx)) events, placed at random."""
    k = int(math.floor(p * len(idx) + 0.5))
    return rng.permutation(idx)[:k]


def scenario_rows(config: ScenarioConfig) -> tuple[list[str], list[dict[str, str]]]:
    """Nepal-like individuals nested in neighborhoods, exposure set at the neighborhood level."""
    config.validate()
    nb_rng = stream(config.seed, NEIGHBORHOOD)
    N = config.n_neighborhoods
    market = nb_rng.lognormal(mean=0.5, sigma=0.6, size=N)
    health = nb_rng.gamma(shape=3.0, scale=0.8, size=N)
    school = nb_rng.beta(4.0, 3.0, size=N)
    exposed_nb = np.sort(nb_rng.choice(N, size=config.n_exposed_neighborhoods, replace=False))
    is_exp_nb = np.zeros(N, dtype=bool)
    is_exp_nb[exposed_nb] = True
    # exposed neighborhoods sit a little closer to markets and health posts
    market[is_exp_nb] -= config.nbhd_shift * market.std()
    market = np.maximum(market, 0.05)
    health[is_exp_nb] -= config.nbhd_shift * health.std()
    health = np.maximum(health, 0.05)
    unexposed_nb = np.flatnonzero(~is_exp_nb)

    def individuals(rng, n, young_count, nbs, shift):
        young = np.zeros(n, dtype=bool)
        young[rng.choice(n, size=young_count, replace=False)] = True
        eth = rng.choice(len(ETHNICITIES), size=n, p=ETHNICITY_P)
        female = (rng.random(n) < 0.5 + shift * config.female_shift).astype(int)
        base = np.where(young, 3.0, 7.0)
        edu = np.clip(np.rint(rng.normal(base + shift * config.education_shift * 2.5, 2.5)), 0, 16).astype(int)
        nb = nbs[rng.integers(len(nbs), size=n)]
        return young, eth, female, edu, nb

    e_rng = stream(config.seed, EXPOSED)
    nE = config.n_exposed_individuals
    e_young, e_eth, e_female, e_edu, e_nb = individuals(e_rng, nE, config.n_young_exposed, exposed_nb, 1.0)

    # unexposed pool sized per age x ethnicity cell so every cell has >= factor x exposed
    c_rng = stream(config.seed, CONTROL)
    need = {}
    for y, k in zip(e_young, e_eth):
        need[(bool(y), int(k))] = need.get((bool(y), int(k)), 0) + 1
    c_young, c_eth = [], []
    for (y, k) in sorted(need):
        m = int(math.ceil(config.control_factor * need[(y, k)]))
        c_young += [y] * m
        c_eth += [k] * m
    nC = len(c_young)
    c_young = np.array(c_young, dtype=bool)
    c_eth = np.array(c_eth, dtype=int)
    c_female = (c_rng.random(nC) < 0.5).astype(int)
    c_edu = np.clip(np.rint(c_rng.normal(np.where(c_young, 3.0, 7.0), 2.5)), 0, 16).astype(int)
    c_nb = unexposed_nb[c_rng.integers(len(unexposed_nb), size=nC)]

    young = np.concatenate([e_young, c_young])
    eth = np.concatenate([e_eth, c_eth])
    female = np.concatenate([e_female, c_female])
    edu = np.concatenate([e_edu, c_edu])
    nb = np.concatenate([e_nb, c_nb])
    exposed = np.concatenate([np.ones(nE, dtype=bool), np.zeros(nC, dtype=bool)])

    o_rng = stream(config.seed, OUTCOME)
    outcome = np.zeros(len(exposed), dtype=int)
    for grp, e in (("exposed", True), ("unexposed", False)):
        for age, y in (("young", True), ("older", False)):
            idx = np.flatnonzero((exposed == e) & (young == y))
            outcome[_allocate(o_rng, idx, config.risk[f"{grp}_{age}"])] = 1

    header = ["id", "exposed", "neighborhood", "age_cat", "ethnicity", "female", "education",
              "nbhd_market_km", "nbhd_health_km", "nbhd_school_share", "outcome"]
    rows = []
    for i in range(len(exposed)):
        j = nb[i]
        rows.append({
            "id": f"p{i + 1:05d}",
            "exposed": "1" if exposed[i] else "0",
            "neighborhood": f"nb{j + 1:03d}",
            "age_cat": "young" if young[i] else "older",
            "ethnicity": ETHNICITIES[eth[i]],
            "female": str(int(female[i])),
            "education": str(int(edu[i])),
            "nbhd_market_km": f"{market[j]:.4f}",
            "nbhd_health_km": f"{health[j]:.4f}",
            "nbhd_school_share": f"{school[j]:.4f}",
            "outcome": str(int(outcome[i])),
        })
    return header, rows


def scenario_study(tolerance: float = 0.1, time_limit_s: float = 60.0) -> dict:
    """Study config matching the generated columns: exact on age and ethnicity, means on the rest."""
    return {
        "covariates": {
            "balance": list(BALANCE),
            "exact": list(EXACT),
            "ignore": ["neighborhood"],
            "tolerance": tolerance,
        },
        "target": {"source": "treated", "tolerance": tolerance},
        "solver": {"time_limit_s": time_limit_s, "gap_abs": 0, "threads": 1, "seed": 0},
        "pairing": {"metric": "standardized_l1"},
        "outcome": {"column": "outcome", "test": "mcnemar"},
    }


def scenario_dataset(config: ScenarioConfig | None = None, tolerance: float = 0.1) -> tuple[Dataset, StudySpec]:
    config = config or ScenarioConfig()
    spec = spec_from_dict(scenario_study(tolerance))
    header, rows = scenario_rows(config)
    return dataset_from_rows(header, rows, spec.covariates, spec.outcome.column), spec


def generate_scenario(config: ScenarioConfig, out_dir) -> tuple[Path, Path]:
    """Write data.csv and study.json for one scenario; returns both paths."""
    header, rows = scenario_rows(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_path, study_path = out / "data.csv", out / "study.json"
    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    study_path.write_text(json.dumps(scenario_study(), indent=2) + "\n", encoding="utf-8")
    return data_path, study_path


def scenario_config_dict(config: ScenarioConfig) -> dict:
    return asdict(config)


def generate_scale_instance(
    n_units: int = 100_000,
    n_covariates: int = 5,
    n_strata: int = 8,
    treated_fraction: float = 0.2,
    shift: float = 0.3,
    seed: int = 0,
) -> Dataset:
    """Gaussian covariates, exposed units shifted by `shift` SD, uniform random strata."""
    if n_units < 2 or n_covariates < 1 or n_strata < 1:
        raise InvalidConfig("need n_units >= 2, n_covariates >= 1, n_strata >= 1")
    if not 0 < treated_fraction < 1:
        raise InvalidConfig("treated_fraction must be in (0, 1)")
    exposed = stream(seed, ASSIGN).random(n_units) < treated_fraction
    X = stream(seed, EXPOSED).normal(size=(n_units, n_covariates)) + shift * exposed[:, None]
    keys = [(f"s{k}",) for k in stream(seed, NEIGHBORHOOD).integers(n_strata, size=n_units)]
    width = len(str(n_units))
    return make_dataset([f"u{i:0{width}d}" for i in range(n_units)], exposed, X,
                        names=[f"x{k + 1}" for k in range(n_covariates)],
                        exact_keys=keys, exact_names=["stratum"])


def scale_spec(tolerance: float = 0.1, time_limit_s: float = 600.0, gap_abs: float = 1.0) -> StudySpec:
    """Study spec for scale instances: mean balance plus a treated-sample target."""
    return StudySpec(
        covariates=CovariateConfig(default_tolerance=tolerance),
        target=TargetConfig(source="treated", default_tolerance=tolerance),
        solver=SolverConfig(time_limit_s=time_limit_s, gap_abs=gap_abs),
    )


def outlier_instance(seed: int = 0, n_treated: int = 45, n_outliers: int = 5, n_controls: int = 300) -> Dataset:
    """Overlapping groups plus one outlying exposed cluster.

    The cluster sits far out on the first covariate, beyond every unexposed
    unit, so nearest-neighbour matching on the propensity score has no control
    inside the caliper for it; the cluster only moves the exposed mean a little,
    which a mean-balanced selection absorbs by choosing controls above average.
    """
    rng = stream(seed, EXPOSED)
    core = rng.normal(size=(n_treated - n_outliers, 2))
    cluster = np.column_stack([np.full(n_outliers, 4.0) + 0.05 * rng.normal(size=n_outliers),
                               0.2 * rng.normal(size=n_outliers)])
    controls = stream(seed, CONTROL).normal(size=(n_controls, 2))
    controls[:, 0] = np.clip(controls[:, 0], -2.5, 2.5)
    X = np.vstack([core, cluster, controls])
    exposed = np.r_[np.ones(n_treated, dtype=bool), np.zeros(n_controls, dtype=bool)]
    ids = [f"t{i:03d}" for i in range(n_treated)] + [f"c{i:03d}" for i in range(n_controls)]
    return make_dataset(ids, exposed, X, names=["x1", "x2"])


BENCH_FIELDS = ["size", "n_units", "n_exposed", "wall_s", "solve_s", "n", "bound", "gap", "status",
                "retention", "nodes", "flag"]


def run_benchmark(sizes, spec: StudySpec | None = None, seed: int = 0, out_csv=None, **instance_kw) -> list[dict]:
    """Match + pair one scale instance per size (ascending, sequential) and tabulate the results."""
    from .pipeline import run_match

    spec = spec or scale_spec()
    rows = []
    for size in sorted(int(s) for s in sizes):
        ds = generate_scale_instance(size, seed=seed, **instance_kw)
        t0 = time.perf_counter()
        run = run_match(ds, spec)
        wall = time.perf_counter() - t0
        sol = run.solution
        rows.append({
            "size": size,
            "n_units": len(ds),
            "n_exposed": int(ds.exposed.sum()),
            "wall_s": round(wall, 3),
            "solve_s": round(run.timings["solve_s"], 3),
            "n": sol.n,
            "bound": sol.bound,
            "gap": sol.gap,
            "status": sol.status,
            "retention": round(run.balance.retention, 6),
            "nodes": sol.log.get("nodes", 0),
            "flag": "TimeLimit" if sol.time_limited else "",
        })
    if out_csv is not None:
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def oracle_instance(seed: int, max_treated: int = 12, max_controls: int = 12, n_covariates: int = 2,
                    max_strata: int = 3, shift: float = 0.5, stratified: bool = True) -> Dataset:
    """Small random instance for enumeration checks; redrawn until some stratum is pairable."""
    rng = stream(seed, ASSIGN)
    while True:
        nT = int(rng.integers(2, max_treated + 1))
        nC = int(rng.integers(2, max_controls + 1))
        X = rng.normal(size=(nT + nC, n_covariates))
        X[:nT] += shift
        ns = int(rng.integers(1, max_strata + 1)) if stratified else 1
        labels = rng.integers(ns, size=nT + nC)
        if set(labels[:nT].tolist()) & set(labels[nT:].tolist()):
            break
    ids = [f"u{i:02d}" for i in range(nT + nC)]
    return make_dataset(ids, [True] * nT + [False] * nC, X, exact_keys=[(f"s{k}",) for k in labels],
                        exact_names=["stratum"])
