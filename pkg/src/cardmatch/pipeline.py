"""End-to-end study pipeline: profile -> selection -> pairing -> diagnostics."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import StudySpec
from .data import Dataset
from .diagnostics import BalanceReport, balance_report, export_love_plot, write_balance_csv, write_balance_json
from .errors import CardmatchError
from .pairing import PairSet, pair_within_strata
from .problem import (FeasibilityReport, SelectionProblem, TargetProfile, balance_spec_for, compile_problem,
                      derive_target_profile, verify_solution)
from .solver import MatchSolution, branch_and_bound

log = logging.getLogger("cardmatch.pipeline")


class ContractBreach(CardmatchError):
    """A solver output failed independent re-verification."""


@dataclass
class MatchRun:
    dataset: Dataset
    spec: StudySpec
    problem: SelectionProblem
    target: TargetProfile | None
    solution: MatchSolution
    feasibility: FeasibilityReport
    pairs: PairSet
    balance: BalanceReport
    timings: dict = field(default_factory=dict)


def target_for(spec: StudySpec, dataset: Dataset) -> TargetProfile | None:
    if spec.target is None:
        return None
    src = spec.target.path if spec.target.source == "file" else spec.target.source
    return derive_target_profile(src, dataset)


def run_match(dataset: Dataset, spec: StudySpec, target: TargetProfile | None = None) -> MatchRun:
    """Compile, solve, verify, pair and diagnose one study."""
    timings = {}
    t0 = time.perf_counter()
    if target is None:
        target = target_for(spec, dataset)
    bal = balance_spec_for(spec, dataset)
    problem = compile_problem(dataset, bal, target)
    timings["compile_s"] = time.perf_counter() - t0
    log.info("compiled %d rows x %d variables", problem.n_rows, problem.n_vars)

    t1 = time.perf_counter()
    sv = spec.solver
    solution = branch_and_bound(problem, time_limit_s=sv.time_limit_s, gap_abs=sv.gap_abs, seed=sv.seed)
    timings["solve_s"] = time.perf_counter() - t1

    feas = verify_solution(problem, solution)
    if not feas.passed:
        raise ContractBreach(f"selection violates {len(feas.violations)} rows: {feas.violations[:3]}")

    t2 = time.perf_counter()
    pairs = pair_within_strata(solution, dataset, spec.pairing.metric)
    timings["pair_s"] = time.perf_counter() - t2

    report = balance_report(
        dataset, solution=solution, target=target,
        group_tolerance=bal.group_tolerance if bal.group_balance else None,
        target_tolerance=bal.target_tolerance if target is not None else None,
    )
    if report.breaches:
        raise ContractBreach("; ".join(report.breaches))
    timings["total_s"] = time.perf_counter() - t0
    return MatchRun(dataset, spec, problem, target, solution, feas, pairs, report, timings)


def stratum_label(key: tuple[str, ...]) -> str:
    return "|".join(key) if key else "all"


def write_pairs_csv(pairs: PairSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "treated_id", "control_id", "stratum", "distance"])
        for k, ((t, c), d, s) in enumerate(zip(pairs.pairs, pairs.distances, pairs.strata), start=1):
            w.writerow([k, t, c, stratum_label(s), repr(float(d))])


def solve_log_text(run: MatchRun) -> str:
    sol = run.solution
    lines = list(sol.log.get("events", []))
    lines.append(f"rows={run.problem.n_rows} vars={run.problem.n_vars}")
    lines.append(f"status={sol.status} n={sol.n} bound={sol.bound} gap={sol.gap}")
    lines.append(f"nodes={sol.log.get('nodes', 0)} lp_iterations={sol.log.get('lp_iterations', 0)}")
    lines.append(f"verify={'PASS' if run.feasibility.passed else 'FAIL'}")
    lines.append(f"total_distance={run.pairs.total_distance!r}")
    return "\n".join(lines) + "\n"


def write_match_artifacts(run: MatchRun, out_dir) -> list[Path]:
    """Write pairs.csv, balance.csv, balance.json, love.svg and solve.log; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "pairs.csv", out / "balance.csv", out / "balance.json", out / "love.svg", out / "solve.log"]
    write_pairs_csv(run.pairs, paths[0])
    write_balance_csv(run.balance, paths[1])
    write_balance_json(run.balance, paths[2])
    export_love_plot(run.balance, paths[3])
    paths[4].write_text(solve_log_text(run), encoding="utf-8")
    return paths


def retention_row(label: str, kept: int, total: int, max_abs_smd: float | None) -> dict:
    return {
        "method": label,
        "exposed_kept": kept,
        "exposed_total": total,
        "retention": kept / total if total else float("nan"),
        "max_abs_smd_after": max_abs_smd,
    }


def max_abs_smd(report: BalanceReport) -> float | None:
    vals = [abs(c.smd_after) for c in report.covariates if c.smd_after is not None]
    return float(np.max(vals)) if vals else None
