import csv
import hashlib
import json

import pytest

from cardmatch.cli import main
from cardmatch.data import write_dataset
from cardmatch.synth import generate_scale_instance, outlier_instance

ARTIFACTS = ("pairs.csv", "balance.csv", "balance.json", "love.svg", "solve.log")


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(d)]) == 0
    return d


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_match_artifacts(scenario, tmp_path, capsys):
    code = main(["match", "--data", str(scenario / "data.csv"), "--config", str(scenario / "study.json"),
                 "--out", str(tmp_path)])
    assert code == 0
    for name in ARTIFACTS + ("manifest.json",):
        assert (tmp_path / name).exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["subcommand"] == "match" and man["result"]["gap"] == 0
    for name, digest in man["outputs"].items():
        assert sha(tmp_path / name) == digest
    assert man["inputs"][str(scenario / "data.csv")] == sha(scenario / "data.csv")
    assert "n=520" in capsys.readouterr().out


def test_missing_column(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("id,exposed,x\na,1,0\nb,0,1\n")
    (tmp_path / "s.json").write_text(json.dumps({"covariates": {"balance": ["x", "income"]}}))
    code = main(["match", "--data", str(tmp_path / "d.csv"), "--config", str(tmp_path / "s.json"),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    assert "income" in capsys.readouterr().err


def hard_instance(tmp_path):
    ds = generate_scale_instance(20_000, shift=1.0, seed=5)
    write_dataset(ds, tmp_path / "big.csv")
    (tmp_path / "big.json").write_text(json.dumps({
        "covariates": {"balance": list(ds.schema.names), "exact": ["stratum"], "tolerance": 0.05},
        "target": {"source": "treated", "tolerance": 0.05},
    }))
    return tmp_path / "big.csv", tmp_path / "big.json"


def test_time_limit_exit_2(tmp_path, capsys):
    data, cfg = hard_instance(tmp_path)
    code = main(["match", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "run"),
                 "--time-limit", "0.001"])
    assert code == 2
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert man["result"]["status"] == "time-limit" and man["result"]["gap"] > 0
    assert (tmp_path / "run" / "pairs.csv").exists()


def test_analyze_counts(capsys):
    assert main(["analyze", "--counts", "25", "10", "197", "--test", "ztest"]) == 0
    out = capsys.readouterr().out
    assert "P=0.0079" in out


def test_analyze_pairs(scenario, tmp_path, capsys):
    run = tmp_path / "run"
    main(["match", "--data", str(scenario / "data.csv"), "--config", str(scenario / "study.json"),
          "--out", str(run)])
    code = main(["analyze", "--data", str(scenario / "data.csv"), "--config", str(scenario / "study.json"),
                 "--pairs", str(run / "pairs.csv"), "--test", "ztest", "--out", str(tmp_path / "a")])
    assert code == 0
    rep = json.loads((tmp_path / "a" / "outcome.json").read_text())
    assert rep["test"] == "ztest" and rep["n_pairs"] == 520 and 0 <= rep["p_value"] <= 1


def test_verify_pass_and_fail(scenario, tmp_path, capsys):
    run = tmp_path / "run"
    base = ["--data", str(scenario / "data.csv"), "--config", str(scenario / "study.json")]
    main(["match", *base, "--out", str(run)])
    assert main(["verify", *base, "--pairs", str(run / "pairs.csv")]) == 0
    rows = list(csv.DictReader(open(run / "pairs.csv")))
    with open(tmp_path / "half.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        # keep only pairs with the largest distances: balance should break
        w.writerows(sorted(rows, key=lambda r: -float(r["distance"]))[:40])
    assert main(["verify", *base, "--pairs", str(tmp_path / "half.csv")]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_baseline_compare_retention(tmp_path, capsys):
    ds = outlier_instance()
    write_dataset(ds, tmp_path / "o.csv")
    (tmp_path / "o.json").write_text(json.dumps({"covariates": {"balance": ["x1", "x2"], "tolerance": 0.1}}))
    args = ["--data", str(tmp_path / "o.csv"), "--config", str(tmp_path / "o.json")]
    assert main(["baseline", *args, "--out", str(tmp_path / "b"), "--compare"]) == 0
    rows = {r["method"]: r for r in csv.DictReader(open(tmp_path / "b" / "retention.csv"))}
    assert int(rows["cardinality"]["exposed_kept"]) >= int(rows["propensity_greedy"]["exposed_kept"])
    assert int(rows["propensity_greedy"]["exposed_kept"]) < int(rows["propensity_greedy"]["exposed_total"])
    assert (tmp_path / "b" / "psm_pairs.csv").exists() and (tmp_path / "b" / "psm_balance.csv").exists()
    assert main(["match", *args, "--out", str(tmp_path / "m")]) == 0


def test_rerun_identical(scenario, tmp_path):
    base = ["match", "--data", str(scenario / "data.csv"), "--config", str(scenario / "study.json")]
    main([*base, "--out", str(tmp_path / "a")])
    main([*base, "--out", str(tmp_path / "b")])
    for name in ("pairs.csv", "balance.csv", "balance.json", "love.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flags_one_hot_and_group(tmp_path, capsys):
    (tmp_path / "d.csv").write_text(
        "id,exposed,x,edu\n" + "".join(f"u{i},{i % 2},{i * 0.37 % 1:.3f},{'abc'[i % 3]}\n" for i in range(30)))
    (tmp_path / "s.json").write_text(json.dumps({"covariates": {"balance": ["x"], "tolerance": 0.3}}))
    code = main(["match", "--data", str(tmp_path / "d.csv"), "--config", str(tmp_path / "s.json"),
                 "--one-hot", "edu", "--no-group-balance", "--out", str(tmp_path / "o")])
    assert code == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["covariates"]["one_hot"] == ["edu"]
    assert man["config"]["covariates"]["group_balance"] is False
    names = {r["covariate"] for r in csv.DictReader(open(tmp_path / "o" / "balance.csv"))}
    assert names == {"x", "edu=a", "edu=b", "edu=c"}


def test_bad_log_level(monkeypatch, capsys):
    monkeypatch.setenv("CARDMATCH_LOG", "loud")
    assert main(["analyze", "--counts", "1", "2", "10"]) == 1


def test_bench(tmp_path, capsys):
    assert main(["bench", "--sizes", "400", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert rows[0]["size"] == "400" and rows[0]["gap"] == "0"
