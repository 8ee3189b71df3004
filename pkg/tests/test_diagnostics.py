import csv
import re
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardmatch.data import make_dataset
from cardmatch.diagnostics import balance_report, export_love_plot, love_plot_svg, smd, write_balance_csv
from cardmatch.pipeline import run_match
from cardmatch.problem import derive_target_profile
from cardmatch.synth import scenario_dataset


def test_smd_basics():
    assert smd([1.0, 3.0], [2.0, 2.0], 1.5) == 0
    assert smd([2.0, 4.0], [1.0, 3.0], 1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        smd([1.0], [2.0], 0.0)


def test_smd_independent():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=17), rng.normal(1, 2, size=23)
    s = np.sqrt((a.var(ddof=1) + b.var(ddof=1)) / 2)
    expected = (sum(a) / len(a) - sum(b) / len(b)) / s
    assert smd(a, b, s) == pytest.approx(expected, abs=1e-12)


def random_ds(seed, K=3, n=40):
    rng = np.random.default_rng(seed)
    e = np.arange(n) % 2 == 0
    return make_dataset([f"u{i:02d}" for i in range(n)], e, rng.normal(size=(n, K)) + 0.4 * e[:, None],
                        names=[f"v{k}" for k in range(K)])


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.01, 100), b=st.floats(-1e3, 1e3), seed=st.integers(0, 1000))
def test_smd_affine_invariant(a, b, seed):
    ds = random_ds(seed, K=1)
    ds2 = make_dataset(list(ds.ids), ds.exposed, a * ds.raw + b, names=["v0"])
    sel = SimpleNamespace(treated_ids=list(ds.ids[0:10:2]), control_ids=list(ds.ids[1:10:2]))
    r1, r2 = balance_report(ds, sel), balance_report(ds2, sel)
    assert r1.covariates[0].smd_before == pytest.approx(r2.covariates[0].smd_before, abs=1e-10)
    assert r1.covariates[0].smd_after == pytest.approx(r2.covariates[0].smd_after, abs=1e-10)


def test_matched_report_within_tolerance():
    ds, spec = scenario_dataset()
    run = run_match(ds, spec)
    rep = run.balance
    assert all(abs(c.smd_after) <= 0.1 + 1e-9 for c in rep.covariates)
    assert all(c.target_dev_t <= 0.1 + 1e-9 and c.target_dev_c <= 0.1 + 1e-9 for c in rep.covariates)
    assert rep.retention == 1.0
    assert rep.kept_treated == rep.kept_control == run.solution.n <= rep.n_treated
    assert not rep.breaches


def test_breach_flagged():
    ds = random_ds(1)
    sel = SimpleNamespace(treated_ids=[ds.ids[0]], control_ids=[ds.ids[1]])
    rep = balance_report(ds, sel, group_tolerance=np.zeros(3))
    assert rep.breaches


def test_empty_selection(tmp_path):
    ds = random_ds(2)
    rep = balance_report(ds, SimpleNamespace(treated_ids=[], control_ids=[]),
                         target=derive_target_profile("treated", ds))
    assert rep.n == 0
    assert all(c.smd_after is None for c in rep.covariates)
    write_balance_csv(rep, tmp_path / "b.csv")
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    after = [r for r in rows if r["phase"] == "after"]
    assert len(rows) == 6 and all(r["smd"] == "NA" for r in after)


def test_love_plot_structure(tmp_path):
    ds = random_ds(3)
    sel = SimpleNamespace(treated_ids=list(ds.ids[0:20:2]), control_ids=list(ds.ids[1:20:2]))
    rep = balance_report(ds, sel)
    svg = love_plot_svg(rep)
    assert len(re.findall(r'class="point (before|after)"', svg)) == 6
    assert len(re.findall(r'class="reference"', svg)) == 2
    export_love_plot(rep, tmp_path / "a.svg")
    export_love_plot(rep, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_love_plot_after_worse():
    ds = random_ds(4, K=2)
    # pick the most separated pair so after-matching |SMD| exceeds before on some covariate
    t = ds.treated_idx[np.argmax(ds.X[ds.treated_idx, 0])]
    c = ds.control_idx[np.argmin(ds.X[ds.control_idx, 0])]
    rep = balance_report(ds, SimpleNamespace(treated_ids=[ds.ids[t]], control_ids=[ds.ids[c]]))
    assert abs(rep.covariates[0].smd_after) > abs(rep.covariates[0].smd_before)
    assert love_plot_svg(rep).count('class="point after"') == 2


def test_love_plot_rejects_empty_report():
    rep = balance_report(random_ds(5), None)
    rep.covariates.clear()
    with pytest.raises(ValueError):
        love_plot_svg(rep)
