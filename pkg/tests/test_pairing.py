import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardmatch.data import make_dataset
from cardmatch.errors import UnbalancedStratum
from cardmatch.pairing import distance_matrix, lexicographic_optimum, pair_within_strata, solve_assignment


def brute_min(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def brute_lex(cost, tol=1e-9):
    n = cost.shape[0]
    best = brute_min(cost)
    return min(p for p in itertools.permutations(range(n))
               if sum(cost[i, p[i]] for i in range(n)) <= best + tol)


def naive_distances(T, C, metric):
    out = np.empty((len(T), len(C)))
    for i, a in enumerate(T):
        for j, b in enumerate(C):
            if metric == "standardized_l1":
                out[i, j] = sum(abs(x - y) for x, y in zip(a, b))
            else:
                out[i, j] = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    return out


def test_distance_basics():
    assert distance_matrix([[1.0, 2.0]], [[1.0, 2.0]])[0, 0] == 0
    for m in ("standardized_l1", "standardized_l2"):
        assert distance_matrix([[0.0]], [[1.5]], m)[0, 0] == pytest.approx(1.5, abs=1e-15)


@pytest.mark.parametrize("metric", ["standardized_l1", "standardized_l2"])
def test_distance_double_implementation(metric):
    rng = np.random.default_rng(1)
    T, C = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(distance_matrix(T, C, metric), naive_distances(T, C, metric), atol=1e-12)
    np.testing.assert_allclose(distance_matrix(T, C, metric), distance_matrix(C, T, metric).T, atol=0)


def test_assignment_2x2():
    col, _, _ = solve_assignment(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert list(col) == [0, 1]


def test_assignment_brute_force_100():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        cost = rng.random((n, n)) * rng.choice([1.0, 10.0, 1e3])
        col, u, v = solve_assignment(cost)
        total = cost[np.arange(n), col].sum()
        assert abs(total - brute_min(cost)) <= 1e-9 * max(1.0, abs(total))
        # dual feasibility and complementary slackness certify optimality
        assert np.all(cost - u[:, None] - v[None, :] >= -1e-9)


def test_lexicographic_ties():
    rng = np.random.default_rng(5)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        cost = rng.integers(0, 3, size=(n, n)).astype(float)  # many ties
        col, u, v = solve_assignment(cost)
        assert tuple(lexicographic_optimum(cost, col, u, v)) == brute_lex(cost)


def selection(ids_t, ids_c):
    return SimpleNamespace(treated_ids=list(ids_t), control_ids=list(ids_c))


def test_all_equal_costs_identity_pairing():
    # t9 and c9 are never selected; they only give the columns nonzero spread
    ds = make_dataset(["t1", "t2", "t3", "t9", "c1", "c2", "c3", "c9"], [1, 1, 1, 1, 0, 0, 0, 0],
                      np.array([[0, 1.0], [0, 1.0], [0, 1.0], [5, 5], [1, 0.0], [1, 0.0], [1, 0.0], [-5, 2]]))
    ps = pair_within_strata(selection(["t3", "t1", "t2"], ["c2", "c3", "c1"]), ds)
    assert ps.pairs == [("t1", "c1"), ("t2", "c2"), ("t3", "c3")]


def random_stratified(seed, n_pairs=7, K=3):
    rng = np.random.default_rng(seed)
    n = 2 * n_pairs + 4
    X = rng.normal(size=(n, K))
    exposed = np.array([True] * (n_pairs + 2) + [False] * (n_pairs + 2))
    keys = [(str(rng.integers(2)),) for _ in range(n)]
    return make_dataset([f"u{i:02d}" for i in range(n)], exposed, X, exact_keys=keys, exact_names=["s"])


def balanced_selection(ds, rng):
    t_ids, c_ids = [], []
    for key in sorted(set(ds.exact_keys)):
        t = [i for i in ds.treated_idx if ds.exact_keys[i] == key]
        c = [i for i in ds.control_idx if ds.exact_keys[i] == key]
        k = int(rng.integers(0, min(len(t), len(c)) + 1))
        t_ids += [ds.ids[i] for i in rng.permutation(t)[:k]]
        c_ids += [ds.ids[i] for i in rng.permutation(c)[:k]]
    return selection(t_ids, c_ids)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_pairs_preserve_selection_and_strata(seed):
    ds = random_stratified(seed)
    sel = balanced_selection(ds, np.random.default_rng(seed))
    ps = pair_within_strata(sel, ds)
    assert sorted(t for t, _ in ps.pairs) == sorted(sel.treated_ids)
    assert sorted(c for _, c in ps.pairs) == sorted(sel.control_ids)
    pos = ds.index_of()
    for (t, c), key in zip(ps.pairs, ps.strata):
        assert ds.exact_keys[pos[t]] == ds.exact_keys[pos[c]] == key
    # exchange stability: no two pairs in a stratum gain by swapping partners
    D = {}
    for (t, c), d in zip(ps.pairs, ps.distances):
        D[(t, c)] = d
    for (a, b), (c, d) in itertools.combinations(list(zip(ps.pairs, ps.strata)), 2):
        if b != d:
            continue
        (t1, c1), (t2, c2) = a, c
        swap = distance_matrix(ds.X[[pos[t1]]], ds.X[[pos[c2]]])[0, 0] + \
            distance_matrix(ds.X[[pos[t2]]], ds.X[[pos[c1]]])[0, 0]
        assert swap >= D[a] + D[c] - 1e-9


def test_duplicated_column_keeps_pairing():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(12, 2))
    e = [True] * 6 + [False] * 6
    ids = [f"u{i:02d}" for i in range(12)]
    ds1 = make_dataset(ids, e, X)
    ds2 = make_dataset(ids, e, np.column_stack([X, X[:, 0]]))
    sel = selection(ids[:6], ids[6:])
    p1, p2 = pair_within_strata(sel, ds1), pair_within_strata(sel, ds2)
    assert p1.pairs == p2.pairs


def test_unbalanced_stratum():
    ds = random_stratified(0)
    t = [ds.ids[i] for i in ds.treated_idx[:2]]
    c = [ds.ids[i] for i in ds.control_idx[:1]]
    with pytest.raises(UnbalancedStratum):
        pair_within_strata(selection(t, c), ds)
