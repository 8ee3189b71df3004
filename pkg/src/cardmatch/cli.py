"""Command-line entry point: ``cardmatch {match,analyze,baseline,simulate,bench,verify}``.

Exit codes: 0 success (optimal, or within the requested gap), 2 feasible
incumbent returned at the time limit, 1 error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import warnings
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .baseline import fit_logistic_propensity, greedy_nn_match
from .config import METRICS, TESTS, StudySpec, parse_spec, spec_from_dict
from .data import load_dataset
from .diagnostics import balance_report, write_balance_csv
from .errors import CardmatchError
from .inference import analyze_pairs, two_proportion_ztest
from .pairing import PairSet
from .pipeline import (max_abs_smd, retention_row, run_match, stratum_label, target_for,
                       write_match_artifacts, write_pairs_csv)
from .problem import balance_spec_for, compile_problem, verify_solution
from .synth import ScenarioConfig, generate_scenario, run_benchmark, scale_spec, scenario_config_dict

EXIT_OK, EXIT_ERROR, EXIT_LIMIT = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("cardmatch")


def _setup_logging() -> None:
    level = os.environ.get("CARDMATCH_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise CardmatchError(f"CARDMATCH_LOG must be one of error|warn|info|debug, got {level!r}")
    log.setLevel(LOG_LEVELS[level])
    if not log.handlers:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(h)
    log.propagate = False
    if LOG_LEVELS[level] > logging.WARNING:
        warnings.simplefilter("ignore")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir, subcommand, config_doc, inputs, seed, outputs, started, extra=None) -> Path:
    """Write manifest.json atomically (temp file + rename) once every output exists."""
    out = Path(out_dir)
    doc = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "config_hash": config_hash(config_doc),
        "config": config_doc,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "seed": seed,
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        "started": started,
        "finished": _now(),
    }
    if extra:
        doc.update(extra)
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest.", suffix=".json")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    path = out / "manifest.json"
    os.replace(tmp, path)
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_spec(args) -> StudySpec:
    """Config file first, then command-line overrides, then re-validation."""
    spec = parse_spec(args.config) if getattr(args, "config", None) else StudySpec()
    doc = spec.to_dict()
    cov, solver = doc["covariates"], doc["solver"]
    for name in getattr(args, "one_hot", None) or []:
        if name in cov["balance"]:
            cov["balance"].remove(name)
        if name not in cov["one_hot"]:
            cov["one_hot"].append(name)
    if getattr(args, "no_group_balance", False):
        cov["group_balance"] = False
    if getattr(args, "tolerance", None) is not None:
        cov["tolerance"] = args.tolerance
        if doc["target"] is not None:
            doc["target"]["tolerance"] = args.tolerance
    for flag, key in (("time_limit", "time_limit_s"), ("gap", "gap_abs"), ("seed", "seed"), ("threads", "threads")):
        if getattr(args, flag, None) is not None:
            solver[key] = getattr(args, flag)
    if getattr(args, "metric", None):
        doc["pairing"]["metric"] = args.metric
    if getattr(args, "outcome", None):
        doc["outcome"]["column"] = args.outcome
    if getattr(args, "test", None):
        doc["outcome"]["test"] = args.test
    return spec_from_dict(_strip_none(doc))


def _strip_none(doc):
    if isinstance(doc, dict):
        return {k: _strip_none(v) for k, v in doc.items() if v is not None}
    return doc


def _read_pairs(path) -> PairSet:
    pairs, dists, strata = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            pairs.append((row["treated_id"], row["control_id"]))
            dists.append(float(row["distance"]))
            s = row.get("stratum", "all")
            strata.append(() if s == "all" else tuple(s.split("|")))
    return PairSet(pairs, dists, strata, sum(dists))


def cmd_match(args) -> int:
    started = _now()
    spec = _load_spec(args)
    ds = load_dataset(args.data, spec)
    run = run_match(ds, spec)
    out = Path(args.out)
    outputs = write_match_artifacts(run, out)
    sol = run.solution
    inputs = [args.data] + ([args.config] if args.config else [])
    if spec.target is not None and spec.target.source == "file":
        inputs.append(spec.target.path)
    write_manifest(out, "match", spec.to_dict(), inputs, spec.solver.seed, outputs, started,
                   {"result": {"n": sol.n, "bound": sol.bound, "gap": sol.gap, "status": sol.status}})
    print(f"status={sol.status} n={sol.n} bound={sol.bound} gap={sol.gap} "
          f"exposed_retention={run.balance.retention:.4f}")
    print(f"max |SMD| after: {max_abs_smd(run.balance)}")
    print(f"artifacts written to {out}")
    return EXIT_LIMIT if sol.time_limited else EXIT_OK


def _print_outcome(rep) -> None:
    print(f"test={rep.test} n_pairs={rep.n_pairs}")
    if rep.events is not None:
        print(f"events exposed={rep.events[0]} unexposed={rep.events[1]}")
    if rep.proportions is not None:
        print(f"proportions exposed={rep.proportions[0]:.4%} unexposed={rep.proportions[1]:.4%}")
    if rep.means is not None:
        print(f"means exposed={rep.means[0]:.6g} unexposed={rep.means[1]:.6g}")
    if rep.discordant is not None:
        print(f"discordant exposed-only={rep.discordant[0]} unexposed-only={rep.discordant[1]}")
    print(f"statistic={rep.statistic:.6g} P={rep.p_value:.4g}")
    if rep.flags:
        print("flags: " + ", ".join(rep.flags))


def cmd_analyze(args) -> int:
    started = _now()
    if args.counts:
        et, ec, n = args.counts
        if args.test not in (None, "ztest"):
            raise CardmatchError("--counts supports only --test ztest (pair-level data is needed otherwise)")
        rep = two_proportion_ztest(et, ec, n, continuity=args.continuity)
        spec_doc, inputs, seed = {"counts": list(args.counts)}, [], None
    else:
        if not (args.data and args.pairs):
            raise CardmatchError("analyze needs --data and --pairs (or --counts E_EXPOSED E_UNEXPOSED N)")
        spec = _load_spec(args)
        ds = load_dataset(args.data, spec)
        pairs = _read_pairs(args.pairs)
        cc = args.continuity or spec.outcome.continuity_correction
        rep = analyze_pairs(pairs, ds, spec.outcome.test, cc)
        spec_doc, seed = spec.to_dict(), spec.solver.seed
        inputs = [args.data, args.pairs] + ([args.config] if args.config else [])
    _print_outcome(rep)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "outcome.json"
        path.write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        write_manifest(out, "analyze", spec_doc, inputs, seed, [path], started)
    return EXIT_OK


def cmd_baseline(args) -> int:
    started = _now()
    spec = _load_spec(args)
    ds = load_dataset(args.data, spec)
    model = fit_logistic_propensity(ds)
    caliper = None if args.no_caliper else args.caliper
    res = greedy_nn_match(model, ds, caliper=caliper, respect_strata=args.respect_strata)
    target = target_for(spec, ds)
    report = balance_report(ds, pairs=res.pairs, target=target, label="propensity")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "psm_pairs.csv", out / "psm_balance.csv", out / "retention.csv"]
    write_pairs_csv(res.pairs, outputs[0])
    write_balance_csv(report, outputs[1])
    rows = [retention_row("propensity_greedy", res.matched_treated, report.n_treated, max_abs_smd(report))]
    result = {"matched": res.matched_treated, "excluded": res.excluded_treated,
              "separated": model.separated, "converged": model.converged}
    if args.compare:
        run = run_match(ds, spec)
        rows.append(retention_row("cardinality", run.solution.n, run.balance.n_treated, max_abs_smd(run.balance)))
        result["cardinality_n"] = run.solution.n
    with open(outputs[2], "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("NA" if v is None else v) for k, v in r.items()})
    write_manifest(out, "baseline", spec.to_dict(), [args.data] + ([args.config] if args.config else []),
                   spec.solver.seed, outputs, started, {"result": result})
    for r in rows:
        print(f"{r['method']}: kept {r['exposed_kept']}/{r['exposed_total']} exposed "
              f"(retention {r['retention']:.4f}), max |SMD| after {r['max_abs_smd_after']}")
    if model.separated:
        print("warning: propensity model flagged Separation")
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = _now()
    doc = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = ScenarioConfig.from_dict(doc)
    out = Path(args.out)
    data_path, study_path = generate_scenario(cfg, out)
    scen_path = out / "scenario.json"
    scen_path.write_text(json.dumps(scenario_config_dict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "simulate", scenario_config_dict(cfg), [args.config] if args.config else [],
                   cfg.seed, [data_path, study_path, scen_path], started)
    print(f"wrote {data_path} and {study_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    started = _now()
    spec = scale_spec(tolerance=args.tolerance, time_limit_s=args.time_limit, gap_abs=args.gap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.csv"
    rows = run_benchmark(args.sizes, spec, seed=args.seed, out_csv=path)
    for r in rows:
        print(", ".join(f"{k}={v}" for k, v in r.items()))
    write_manifest(out, "bench", spec.to_dict(), [], args.seed, [path], started)
    return EXIT_LIMIT if any(r["flag"] for r in rows) else EXIT_OK


def cmd_verify(args) -> int:
    spec = _load_spec(args)
    ds = load_dataset(args.data, spec)
    target = target_for(spec, ds)
    problem = compile_problem(ds, balance_spec_for(spec, ds), target)
    pairs = _read_pairs(args.pairs)
    x = problem.vector([t for t, _ in pairs.pairs], [c for _, c in pairs.pairs])
    rep = verify_solution(problem, x)
    print(f"verify {'PASS' if rep.passed else 'FAIL'}: n={rep.n}, rows={problem.n_rows}, "
          f"min slack={min(rep.slacks) if rep.slacks else 0.0:.3g}")
    for name, amount in rep.violations:
        print(f"  violated {name}: {amount:.6g}")
    pos = ds.index_of()
    bad_strata = [stratum_label(s) for s, (t, c) in zip(pairs.strata, pairs.pairs)
                  if ds.exact_keys[pos[t]] != ds.exact_keys[pos[c]]]
    if bad_strata:
        print(f"  {len(bad_strata)} pairs cross exact-match strata")
    return EXIT_OK if rep.passed and not bad_strata else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cardmatch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cardmatch {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def study_args(sp, data_required=True):
        sp.add_argument("--data", required=data_required, help="input CSV")
        sp.add_argument("--config", help="study config (JSON)")
        sp.add_argument("--one-hot", action="append", metavar="COL",
                        help="expand a categorical column into indicator balance covariates")
        sp.add_argument("--no-group-balance", action="store_true", help="drop the exposed-vs-unexposed rows")
        sp.add_argument("--tolerance", type=float, help="override every tolerance (SD units)")

    m = sub.add_parser("match", help="select, pair and diagnose")
    study_args(m)
    m.add_argument("--out", required=True)
    m.add_argument("--time-limit", type=float)
    m.add_argument("--gap", type=float)
    m.add_argument("--seed", type=int)
    m.add_argument("--threads", type=int)
    m.add_argument("--metric", choices=METRICS)
    m.set_defaults(func=cmd_match)

    a = sub.add_parser("analyze", help="outcome test on matched pairs")
    study_args(a, data_required=False)
    a.add_argument("--pairs", help="pairs.csv from match")
    a.add_argument("--counts", type=int, nargs=3, metavar=("E_EXPOSED", "E_UNEXPOSED", "N"),
                   help="two-proportion z-test from summary counts")
    a.add_argument("--outcome", help="outcome column")
    a.add_argument("--test", choices=TESTS)
    a.add_argument("--continuity", action="store_true")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("baseline", help="propensity-score greedy nearest-neighbour matching")
    study_args(b)
    b.add_argument("--out", required=True)
    b.add_argument("--caliper", type=float, default=0.2, help="caliper in SD of the logit score")
    b.add_argument("--no-caliper", action="store_true")
    b.add_argument("--respect-strata", action="store_true")
    b.add_argument("--compare", action="store_true", help="also run cardinality matching for the retention table")
    b.set_defaults(func=cmd_baseline)

    s = sub.add_parser("simulate", help="write a synthetic scenario")
    s.add_argument("--config", help="scenario config (JSON)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    k = sub.add_parser("bench", help="scale benchmark")
    k.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000, 100000])
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--tolerance", type=float, default=0.1)
    k.add_argument("--time-limit", type=float, default=600.0)
    k.add_argument("--gap", type=float, default=1.0)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="re-check a pairs.csv against the study constraints")
    study_args(v)
    v.add_argument("--pairs", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except CardmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
