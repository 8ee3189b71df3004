"""Balance and representativeness diagnostics: SMD tables and a Love plot."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset

REFERENCE_LINES = (0.1, 0.25)
CHECK_TOL = 1e-9


def smd(values_t, values_c, pooled_sd: float) -> float:
    """Signed standardized mean difference with a fixed (pre-match) denominator."""
    if not pooled_sd > 0:
        raise ValueError("pooled_sd must be positive")
    return (float(np.mean(values_t)) - float(np.mean(values_c))) / pooled_sd


@dataclass
class CovariateBalance:
    name: str
    mean_t_before: float
    mean_c_before: float
    mean_t_after: float | None
    mean_c_after: float | None
    target: float | None
    smd_before: float
    smd_after: float | None
    target_dev_t: float | None = None  # |matched treated mean - target| in SD units
    target_dev_c: float | None = None
    group_tolerance: float | None = None
    target_tolerance: float | None = None


@dataclass
class BalanceReport:
    covariates: list[CovariateBalance]
    n_treated: int
    n_control: int
    kept_treated: int
    kept_control: int
    breaches: list[str] = field(default_factory=list)
    label: str = "cardinality"

    @property
    def retention(self) -> float:
        return self.kept_treated / self.n_treated if self.n_treated else float("nan")

    @property
    def n(self) -> int:
        return self.kept_treated

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "retention": {
                "exposed_total": self.n_treated,
                "unexposed_total": self.n_control,
                "exposed_kept": self.kept_treated,
                "unexposed_kept": self.kept_control,
                "exposed_retention": None if math.isnan(self.retention) else self.retention,
            },
            "covariates": [c.__dict__ for c in self.covariates],
            "breaches": list(self.breaches),
        }


def balance_report(
    dataset: Dataset,
    solution=None,
    pairs=None,
    target=None,
    group_tolerance=None,
    target_tolerance=None,
    label: str = "cardinality",
) -> BalanceReport:
    """Before/after balance for every balance covariate.

    The selection is taken from `solution` (treated_ids/control_ids) or, if
    absent, from the units appearing in `pairs`. SMDs in both phases use the
    pre-match pooled SD. When tolerances are given, every after-match SMD and
    target deviation is re-checked and any excess is listed in `breaches`.
    """
    pos = dataset.index_of()
    if solution is not None:
        t_ids, c_ids = solution.treated_ids, solution.control_ids
    elif pairs is not None:
        t_ids = [t for t, _ in pairs.pairs]
        c_ids = [c for _, c in pairs.pairs]
    else:
        t_ids, c_ids = [], []
    t_sel = np.array([pos[i] for i in t_ids], dtype=int)
    c_sel = np.array([pos[i] for i in c_ids], dtype=int)
    raw, sd = dataset.raw, dataset.schema.sd
    T, C = dataset.treated_idx, dataset.control_idx
    rows = []
    breaches = []
    for k, name in enumerate(dataset.schema.names):
        mt0, mc0 = float(raw[T, k].mean()), float(raw[C, k].mean())
        tau = None if target is None else float(target.means[k])
        cb = CovariateBalance(name, mt0, mc0, None, None, tau, smd(raw[T, k], raw[C, k], sd[k]), None)
        if group_tolerance is not None:
            cb.group_tolerance = float(group_tolerance[k])
        if target_tolerance is not None and target is not None:
            cb.target_tolerance = float(target_tolerance[k])
        if len(t_sel) and len(c_sel):
            cb.mean_t_after = float(raw[t_sel, k].mean())
            cb.mean_c_after = float(raw[c_sel, k].mean())
            cb.smd_after = smd(raw[t_sel, k], raw[c_sel, k], sd[k])
            if tau is not None:
                cb.target_dev_t = abs(cb.mean_t_after - tau) / sd[k]
                cb.target_dev_c = abs(cb.mean_c_after - tau) / sd[k]
            if cb.group_tolerance is not None and abs(cb.smd_after) > cb.group_tolerance + CHECK_TOL:
                breaches.append(f"group balance on {name}: |SMD| {abs(cb.smd_after):.6g} > {cb.group_tolerance}")
            if cb.target_tolerance is not None:
                for grp, dev in (("exposed", cb.target_dev_t), ("unexposed", cb.target_dev_c)):
                    if dev > cb.target_tolerance + CHECK_TOL:
                        breaches.append(f"target deviation on {name} ({grp}): {dev:.6g} > {cb.target_tolerance}")
        rows.append(cb)
    return BalanceReport(rows, len(T), len(C), len(t_sel), len(c_sel), breaches, label)


def _fmt(v) -> str:
    if v is None:
        return "NA"
    return repr(float(v))


def write_balance_csv(report: BalanceReport, path) -> None:
    """One row per covariate x phase; the 'after' phase is NA for an empty selection."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "phase", "mean_exposed", "mean_unexposed", "target", "smd",
                    "abs_smd", "target_dev_exposed", "target_dev_unexposed", "n_exposed", "n_unexposed"])
        for c in report.covariates:
            w.writerow([c.name, "before", _fmt(c.mean_t_before), _fmt(c.mean_c_before), _fmt(c.target),
                        _fmt(c.smd_before), _fmt(abs(c.smd_before)), "NA", "NA",
                        report.n_treated, report.n_control])
            after = c.smd_after
            w.writerow([c.name, "after", _fmt(c.mean_t_after), _fmt(c.mean_c_after), _fmt(c.target),
                        _fmt(after), _fmt(None if after is None else abs(after)),
                        _fmt(c.target_dev_t), _fmt(c.target_dev_c),
                        report.kept_treated, report.kept_control])


def write_balance_json(report: BalanceReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def love_plot_svg(report: BalanceReport) -> str:
    """Absolute SMD per covariate, before (open circle) and after (filled), as SVG text."""
    if not report.covariates:
        raise ValueError("empty balance report")
    names = [c.name for c in report.covariates]
    vals = [abs(c.smd_before) for c in report.covariates]
    vals += [abs(c.smd_after) for c in report.covariates if c.smd_after is not None]
    xmax = max([0.3, *vals]) * 1.1
    left, right, top, row_h = 170, 30, 40, 24
    width = 640
    plot_w = width - left - right
    height = top + row_h * len(names) + 50

    def X(v):
        return left + plot_w * v / xmax

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="20">Absolute standardized mean difference</text>',
    ]
    y_end = top + row_h * len(names)
    out.append(f'<line class="axis" x1="{left}" y1="{y_end}" x2="{left + plot_w}" y2="{y_end}" stroke="black"/>')
    for ref in REFERENCE_LINES:
        out.append(f'<line class="reference" x1="{X(ref):.2f}" y1="{top - 10}" x2="{X(ref):.2f}" '
                   f'y2="{y_end}" stroke="gray" stroke-dasharray="4,3"/>')
        out.append(f'<text x="{X(ref):.2f}" y="{y_end + 16}" text-anchor="middle">{ref:g}</text>')
    for i, c in enumerate(report.covariates):
        y = top + row_h * i + row_h / 2
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end">{_esc(c.name)}</text>')
        out.append(f'<circle class="point before" cx="{X(abs(c.smd_before)):.2f}" cy="{y:.2f}" r="4" '
                   'fill="none" stroke="firebrick"/>')
        if c.smd_after is not None:
            out.append(f'<circle class="point after" cx="{X(abs(c.smd_after)):.2f}" cy="{y:.2f}" r="4" '
                       'fill="navy"/>')
    out.append(f'<text x="{left}" y="{height - 10}">open: before matching; filled: after matching</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_love_plot(report: BalanceReport, path) -> None:
    Path(path).write_text(love_plot_svg(report), encoding="utf-8")
