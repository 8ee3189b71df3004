import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from cardmatch.problem import EQ, BalanceSpec, compile_problem, derive_target_profile
from cardmatch.simplex import _solve, solve_lp
from cardmatch.synth import generate_scale_instance, oracle_instance


def highs(p, lo=None, hi=None):
    lo = np.zeros(p.n_vars) if lo is None else lo
    hi = p.upper if hi is None else np.minimum(hi, p.upper)
    eq, le = p.sense == EQ, p.sense != EQ
    res = linprog(-p.c, A_ub=p.A[le], b_ub=p.b[le], A_eq=p.A[eq], b_eq=p.b[eq],
                  bounds=list(zip(lo, hi)), method="highs")
    return res


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), delta=st.floats(0.0, 0.5), target=st.booleans())
def test_objective_matches_highs(seed, delta, target):
    ds = oracle_instance(seed)
    tgt = derive_target_profile("treated", ds) if target else None
    p = compile_problem(ds, BalanceSpec(np.full(2, delta), np.full(2, delta) if target else None), tgt)
    lp = solve_lp(p)
    ref = highs(p)
    assert lp.status == "optimal"
    assert lp.objective == pytest.approx(-ref.fun, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_with_fixings_matches_highs(seed):
    ds = oracle_instance(seed)
    p = compile_problem(ds, BalanceSpec(np.full(2, 0.2)))
    rng = np.random.default_rng(seed)
    lo, hi = np.zeros(p.n_vars), np.ones(p.n_vars)
    for j in rng.choice(p.n_vars, size=min(3, p.n_vars), replace=False):
        if rng.random() < 0.5:
            hi[j] = 0
        else:
            lo[j] = 1
    lp = solve_lp(p, lower=lo, upper=hi)
    ref = highs(p, lo, hi)
    if ref.status == 2:
        assert lp.status == "infeasible"
    else:
        assert lp.status == "optimal"
        assert lp.objective == pytest.approx(-ref.fun, abs=1e-7)


def test_generic_bounded_lp():
    # max x0 + 2 x1 + 0 x2, x0 + x1 + x2 == 2, x0 - x1 <= 0.5, bounds [0,1],[0,0.8],[0,5]
    A = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]])
    b = np.array([2.0, 0.5])
    sense = np.array([EQ, 1])
    c = np.array([1.0, 2.0, 0.0])
    sx, status, _ = _solve(A, b, sense, c, np.zeros(3), np.array([1.0, 0.8, 5.0]), None, None, None)
    x = sx.structural()
    assert status == "optimal"
    np.testing.assert_allclose(x, [1.0, 0.8, 0.2], atol=1e-9)


def test_crash_start_same_objective():
    ds = generate_scale_instance(3000, seed=2)
    tgt = derive_target_profile("treated", ds)
    p = compile_problem(ds, BalanceSpec(np.full(5, 0.1), np.full(5, 0.1)), tgt)
    cold = solve_lp(p)
    start = np.zeros(p.n_vars)
    start[: p.n_treated // 2] = 1
    warm = solve_lp(p, start=start)
    assert cold.status == warm.status == "optimal"
    assert warm.objective == pytest.approx(cold.objective, abs=1e-6)
    assert cold.objective == pytest.approx(-highs(p).fun, abs=1e-6)


def test_deterministic():
    ds = oracle_instance(3)
    p = compile_problem(ds, BalanceSpec(np.full(2, 0.1)))
    a, b = solve_lp(p), solve_lp(p)
    assert np.array_equal(a.x, b.x) and a.pivots == b.pivots


def test_iteration_limit_flag():
    ds = generate_scale_instance(2000, seed=4, shift=0.8)
    tgt = derive_target_profile("treated", ds)
    p = compile_problem(ds, BalanceSpec(np.full(5, 0.05), np.full(5, 0.05)), tgt)
    lp = solve_lp(p, max_iter=5)
    assert lp.status == "iteration-limit"
