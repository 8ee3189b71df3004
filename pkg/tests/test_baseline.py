import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from cardmatch.baseline import PropensityModel, fit_logistic, fit_logistic_propensity, greedy_nn_match
from cardmatch.config import CovariateConfig, StudySpec
from cardmatch.data import make_dataset
from cardmatch.pipeline import run_match
from cardmatch.synth import outlier_instance


def negloglik(beta, Z, y):
    eta = Z @ beta
    return -float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def test_single_parameter_matches_1d_search():
    rng = np.random.default_rng(0)
    for trial in range(5):
        x = rng.normal(size=200)
        y = (rng.random(200) < 1 / (1 + np.exp(-(0.8 * x)))).astype(float)
        beta, *_ = fit_logistic(x[:, None], y)
        ref = minimize_scalar(lambda b: negloglik(np.array([b]), x[:, None], y),
                              bounds=(-10, 10), method="bounded", options={"xatol": 1e-10})
        assert beta[0] == pytest.approx(ref.x, abs=1e-4)


def test_propensity_slope_matches_profile_search():
    rng = np.random.default_rng(1)
    x = rng.normal(size=300)
    e = rng.random(300) < 1 / (1 + np.exp(-(-0.5 + 1.1 * x)))
    ds = make_dataset([f"u{i}" for i in range(300)], e, x)
    model = fit_logistic_propensity(ds)
    z = ds.X[:, 0]
    y = e.astype(float)
    Z = np.column_stack([np.ones(300), z])

    def profile(b1):
        inner = minimize_scalar(lambda b0: negloglik(np.array([b0, b1]), Z, y),
                                bounds=(-10, 10), method="bounded", options={"xatol": 1e-11})
        return inner.fun

    ref = minimize_scalar(profile, bounds=(-10, 10), method="bounded", options={"xatol": 1e-10})
    assert model.coefficients[1] == pytest.approx(ref.x, abs=1e-4)
    assert model.converged and model.grad_norm <= 1e-8


def test_null_model():
    rng = np.random.default_rng(2)
    n = 400
    X = rng.normal(size=(n, 2))
    e = rng.permutation(np.arange(n) < 120)
    ds = make_dataset([str(i) for i in range(n)], e, X)
    model = fit_logistic_propensity(ds)
    Z = np.column_stack([np.ones(n), ds.X])
    p = model.scores
    cov = np.linalg.inv((Z * (p * (1 - p))[:, None]).T @ Z)
    se = np.sqrt(np.diag(cov))
    assert np.all(np.abs(model.coefficients[1:]) <= 3 * se[1:])
    assert model.coefficients[0] == pytest.approx(math.log(120 / 280), abs=3 * se[0])


def test_calibration_and_monotone_loglik():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(150, 3))
    e = rng.random(150) < 1 / (1 + np.exp(-X @ [0.5, -0.4, 0.2]))
    model = fit_logistic_propensity(make_dataset([str(i) for i in range(150)], e, X))
    assert np.all((model.scores > 0) & (model.scores < 1))
    assert model.scores.mean() == pytest.approx(e.mean(), abs=1e-6)
    assert all(b >= a for a, b in zip(model.loglik_history, model.loglik_history[1:]))


def test_separation_flag():
    x = np.array([-3.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0])
    ds = make_dataset([str(i) for i in range(8)], x > 0, x)
    with pytest.warns(UserWarning, match="separation"):
        model = fit_logistic_propensity(ds)
    assert model.separated


def fake_model(ds, scores):
    scores = np.asarray(scores, dtype=float)
    return PropensityModel(np.zeros(2), scores, ds.ids, 0, 0.0, True)


def test_equal_scores_match_everyone():
    ds = make_dataset([f"u{i}" for i in range(9)], [1, 1, 1, 0, 0, 0, 0, 0, 0], np.arange(9.0))
    res = greedy_nn_match(fake_model(ds, np.full(9, 0.3)), ds)
    assert res.matched_treated == 3 and res.excluded_treated == 0
    # ties go to the smallest control id
    assert [c for _, c in res.pairs.pairs] == ["u3", "u4", "u5"]


def test_zero_caliper_no_matches():
    ds = make_dataset([f"u{i}" for i in range(8)], [1] * 4 + [0] * 4, np.arange(8.0))
    res = greedy_nn_match(fake_model(ds, np.linspace(0.1, 0.8, 8)), ds, caliper=0.0)
    assert res.matched_treated == 0 and res.excluded_treated == 4


def test_greedy_order_and_nearest():
    ds = make_dataset(["a", "b", "x", "y"], [1, 1, 0, 0], np.arange(4.0))
    # b has the higher score, takes y (nearest); a gets x
    res = greedy_nn_match(fake_model(ds, [0.5, 0.7, 0.45, 0.69]), ds, caliper=None)
    assert res.pairs.pairs == [("b", "y"), ("a", "x")]


def test_respect_strata():
    rng = np.random.default_rng(4)
    keys = [(str(i % 3),) for i in range(60)]
    e = rng.random(60) < 0.4
    ds = make_dataset([f"u{i:02d}" for i in range(60)], e, rng.normal(size=(60, 2)), exact_keys=keys,
                      exact_names=["k"])
    res = greedy_nn_match(fit_logistic_propensity(ds), ds, caliper=None, respect_strata=True)
    pos = ds.index_of()
    assert all(ds.exact_keys[pos[t]] == ds.exact_keys[pos[c]] for t, c in res.pairs.pairs)


def test_outlier_instance_retention():
    ds = outlier_instance(0)
    greedy = greedy_nn_match(fit_logistic_propensity(ds), ds)
    card = run_match(ds, StudySpec(covariates=CovariateConfig(default_tolerance=0.1)))
    assert greedy.excluded_treated >= 1
    assert card.solution.n == int(ds.exposed.sum())
    assert card.solution.n >= greedy.matched_treated
