import csv
from collections import Counter, defaultdict

import numpy as np
import pytest

from cardmatch.config import parse_spec
from cardmatch.data import load_dataset
from cardmatch.errors import InvalidConfig
from cardmatch.synth import (ScenarioConfig, generate_scale_instance, generate_scenario, outlier_instance,
                             run_benchmark, scenario_rows)


@pytest.fixture(scope="module")
def default_rows():
    return scenario_rows(ScenarioConfig())[1]


def test_default_dimensions(default_rows):
    exposed = [r for r in default_rows if r["exposed"] == "1"]
    assert len(exposed) == 520
    assert sum(r["age_cat"] == "young" for r in exposed) == 197
    assert len({r["neighborhood"] for r in exposed}) == 15
    assert len({r["neighborhood"] for r in default_rows}) <= 151


def test_exposure_constant_within_neighborhood(default_rows):
    seen = defaultdict(set)
    for r in default_rows:
        seen[r["neighborhood"]].add(r["exposed"])
    assert all(len(v) == 1 for v in seen.values())


def test_control_oversupply(default_rows):
    cells = Counter((r["age_cat"], r["ethnicity"], r["exposed"]) for r in default_rows)
    for (age, eth, e), k in cells.items():
        if e == "1":
            assert cells[(age, eth, "0")] >= 4 * k


def test_risk_proportions(default_rows):
    target = {("1", "young"): 0.1269, ("0", "young"): 0.0508, ("1", "older"): 0.0774, ("0", "older"): 0.0681}
    for (e, age), p in target.items():
        grp = [int(r["outcome"]) for r in default_rows if r["exposed"] == e and r["age_cat"] == age]
        assert abs(sum(grp) / len(grp) - p) <= 0.03
    young_exp = [int(r["outcome"]) for r in default_rows if r["exposed"] == "1" and r["age_cat"] == "young"]
    assert sum(young_exp) == 25


def test_files_deterministic(tmp_path):
    a = generate_scenario(ScenarioConfig(seed=3), tmp_path / "a")
    b = generate_scenario(ScenarioConfig(seed=3), tmp_path / "b")
    c = generate_scenario(ScenarioConfig(seed=4), tmp_path / "c")
    assert a[0].read_bytes() == b[0].read_bytes() and a[1].read_bytes() == b[1].read_bytes()
    assert a[0].read_bytes() != c[0].read_bytes()


def test_files_load(tmp_path):
    data, study = generate_scenario(ScenarioConfig(), tmp_path)
    spec = parse_spec(study)
    ds = load_dataset(data, spec)
    assert int(ds.exposed.sum()) == 520
    assert ds.schema.exact == ("age_cat", "ethnicity")


def test_streams_are_separate():
    # more controls must not move any exposed draw
    a = scenario_rows(ScenarioConfig(control_factor=4.0))[1]
    b = scenario_rows(ScenarioConfig(control_factor=6.0))[1]
    ea = [r for r in a if r["exposed"] == "1"]
    eb = [r for r in b if r["exposed"] == "1"]
    strip = lambda rows: [{k: v for k, v in r.items() if k != "outcome"} for r in rows]
    assert strip(ea) == strip(eb)


@pytest.mark.parametrize("kw", [dict(n_young_exposed=600), dict(n_exposed_neighborhoods=200),
                                dict(control_factor=0.5), dict(risk={"exposed_young": 1.5})])
def test_invalid_config(kw):
    with pytest.raises(InvalidConfig):
        scenario_rows(ScenarioConfig.from_dict(kw))


def test_unknown_scenario_key():
    with pytest.raises(InvalidConfig):
        ScenarioConfig.from_dict({"n_kids": 3})


def test_scale_instance_shape():
    ds = generate_scale_instance(5000, n_covariates=5, n_strata=8, seed=1)
    assert len(ds) == 5000 and ds.X.shape == (5000, 5)
    assert len(set(ds.exact_keys)) == 8
    again = generate_scale_instance(5000, n_covariates=5, n_strata=8, seed=1)
    assert np.array_equal(ds.raw, again.raw) and ds.exact_keys == again.exact_keys


def test_outlier_instance_has_cluster():
    ds = outlier_instance()
    assert ds.raw[ds.exposed, 0].max() > ds.raw[~ds.exposed, 0].max() + 1


def test_benchmark_table(tmp_path):
    out = tmp_path / "bench.csv"
    rows = run_benchmark([3000, 300], out_csv=out)
    assert [r["size"] for r in rows] == [300, 3000]
    assert rows[0]["wall_s"] <= rows[1]["wall_s"]
    assert all(r["gap"] == 0 or r["flag"] for r in rows)
    back = list(csv.DictReader(open(out)))
    assert [int(r["n"]) for r in back] == [r["n"] for r in rows]
    again = run_benchmark([300])
    assert again[0]["n"] == rows[0]["n"]
