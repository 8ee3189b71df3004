"""Integer solution of the selection program: rounding, branch-and-bound, exhaustive oracle."""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import TooLarge
from .problem import EQ, LE, VERIFY_TOL, SelectionProblem, verify_solution
from .simplex import LpSolution, solve_lp

log = logging.getLogger("cardmatch.solver")

INT_TOL = 1e-6
BOUND_TOL = 1e-6
# admit a unit only with a margin, so verify_solution (fsum, 1e-9) always agrees
ADMIT_TOL = 1e-10
PARTNER_WINDOW = 256
CRASH_MIN_VARS = 2000
SWAP_OUT = 16
SWAP_IN = 256


@dataclass
class MatchSolution:
    treated_ids: list[str]
    control_ids: list[str]
    n: int
    stratum_counts: dict[tuple[str, ...], int]
    bound: int
    status: str  # "optimal" | "gap-limit" | "time-limit" | "infeasible"
    log: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def gap(self) -> int:
        return self.bound - self.n

    @property
    def time_limited(self) -> bool:
        return self.status == "time-limit"


def _solution_from_vector(problem, x, bound, status, info=None, seed=0) -> MatchSolution:
    t, c = problem.selection_ids(x)
    counts = {key: int(round(x[tv].sum())) for key, tv, _ in problem.strata}
    return MatchSolution(t, c, len(t), counts, int(bound), status, dict(info or {}), seed)


class _Selection:
    """Incremental 0/1 selection with row activities for cheap feasibility checks."""

    def __init__(self, problem: SelectionProblem, x: np.ndarray):
        self.p = problem
        self.x = x.astype(float)
        self.act = problem.A @ self.x
        self.le = problem.sense == LE
        self.eq = problem.sense == EQ

    def ok(self, act=None) -> bool:
        act = self.act if act is None else act
        b = self.p.b
        return bool(np.all(act[self.le] <= b[self.le] + ADMIT_TOL)) and bool(
            np.all(np.abs(act[self.eq] - b[self.eq]) <= ADMIT_TOL)
        )

    def violation(self) -> np.ndarray:
        v = self.act - self.p.b
        v[self.eq] = np.abs(v[self.eq])
        return v

    def set(self, j, value):
        delta = value - self.x[j]
        if delta:
            self.x[j] = value
            self.act += delta * self.p.A[:, j]


def _strictly_feasible(problem, x) -> bool:
    return verify_solution(problem, x).passed


def round_heuristic(
    lp: LpSolution,
    problem: SelectionProblem,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    max_failures: int = 200,
) -> np.ndarray:
    """Greedy rounding of an LP point into a feasible 0/1 selection vector.

    1. Keep the variables at 1 in the LP point and trim each stratum to equal
       exposed/unexposed counts.
    2. While a row is violated, drop the exposed/unexposed pair (same stratum)
       whose removal most reduces the worst violation.
    3. Walk the remaining units by LP value descending (ties by id) and admit a
       unit together with the first same-stratum partner (among the next
       PARTNER_WINDOW candidates) that keeps every row satisfied; stop after
       `max_failures` consecutive rejections.

    Variables fixed by `lower`/`upper` are respected; if the fixings themselves
    cannot be kept feasible the result may drop them (it is then only used as
    an incumbent, never as a node solution).
    """
    n = problem.n_vars
    lo = np.zeros(n) if lower is None else lower
    hi = problem.upper if upper is None else np.minimum(upper, problem.upper)
    val = np.clip(lp.x, 0.0, 1.0)
    ids = problem.var_ids
    # global preference order: value desc, id asc
    order = sorted(range(n), key=lambda j: (-val[j], ids[j]))
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)

    x = ((val >= 1 - INT_TOL) & (hi > 0)).astype(float)
    x = np.maximum(x, (lo > 0.5).astype(float))
    for key, tv, cv in problem.strata:
        t_on = tv[x[tv] > 0.5]
        c_on = cv[x[cv] > 0.5]
        extra = len(t_on) - len(c_on)
        group = t_on if extra > 0 else c_on
        if extra:
            # drop the least-preferred units, keeping fixed-to-one ones if possible
            drop = sorted(group, key=lambda j: (lo[j] > 0.5, -rank[j]))[: abs(extra)]
            x[drop] = 0.0
    sel = _Selection(problem, x)
    var_stratum = _var_strata(problem)

    # repair: swaps first (cardinality kept), pair removal as the fallback
    lo_fixed = lo > 0.5
    while not sel.ok():
        if _best_swap(sel, problem, hi, lo_fixed):
            continue
        viol = sel.violation()
        i = int(np.argmax(viol))
        row = problem.A[i]
        best = None
        for s, (_, tv, cv) in enumerate(problem.strata):
            t_on = tv[sel.x[tv] > 0.5]
            c_on = cv[sel.x[cv] > 0.5]
            if len(t_on) == 0 or len(c_on) == 0:
                continue
            t = t_on[np.argmax(row[t_on])]
            c = c_on[np.argmax(row[c_on])]
            gain = row[t] + row[c]
            if best is None or gain > best[0]:
                best = (gain, t, c)
        if best is None:
            break
        sel.set(best[1], 0.0)
        sel.set(best[2], 0.0)
    if not sel.ok():
        return np.zeros(n)

    _greedy_fill(sel, problem, order, rank, hi, var_stratum, max_failures)
    x = np.round(sel.x)
    if not _strictly_feasible(problem, x):
        return np.zeros(n)
    return x


def _excess(act, problem, le):
    """Total positive violation over inequality rows, per column of `act`."""
    return np.maximum(act[le] - problem.b[le, None], 0.0).sum(axis=0)


def _best_swap(sel, problem, hi, fixed, n_out=SWAP_OUT, n_in=SWAP_IN) -> bool:
    """Apply the single same-stratum, same-group exchange that most reduces total violation."""
    le = sel.le
    viol = sel.violation()
    i = int(np.argmax(np.where(le, viol, -np.inf)))
    row = problem.A[i]
    current = float(_excess(sel.act[:, None], problem, le)[0])
    best = (current - 1e-12, None, None)
    for _, tv, cv in problem.strata:
        for group in (tv, cv):
            on = group[(sel.x[group] > 0.5) & ~fixed[group]]
            off = group[(sel.x[group] < 0.5) & (hi[group] > 0.5)]
            if len(on) == 0 or len(off) == 0:
                continue
            # most harmful selected units out, most helpful unselected units in (for the worst row)
            on = on[np.argsort(-row[on], kind="stable")[:n_out]]
            off = off[np.argsort(row[off], kind="stable")[:n_in]]
            base = sel.act[:, None] - problem.A[:, on]
            for a, j_out in enumerate(on):
                trial = base[:, [a]] + problem.A[:, off]
                ex = _excess(trial, problem, le)
                k = int(np.argmin(ex))
                if ex[k] < best[0]:
                    best = (float(ex[k]), j_out, off[k])
    if best[1] is None:
        return False
    sel.set(best[1], 0.0)
    sel.set(best[2], 1.0)
    return True


def _var_strata(problem: SelectionProblem) -> np.ndarray:
    out = np.empty(problem.n_vars, dtype=int)
    for s, (_, tv, cv) in enumerate(problem.strata):
        out[tv] = s
        out[cv] = s
    return out


def _greedy_fill(sel, problem, order, rank, hi, var_stratum, max_failures, window=PARTNER_WINDOW,
                 deadline=None):
    """Admit units in `order`, each with the first same-stratum partner (by rank) keeping all rows satisfied."""
    le, eq = sel.le, sel.eq
    b_le, b_eq = problem.b[le, None], problem.b[eq, None]
    pools = {}
    for s, (_, tv, cv) in enumerate(problem.strata):
        pools[s, True] = tv[np.argsort(rank[tv], kind="stable")]
        pools[s, False] = cv[np.argsort(rank[cv], kind="stable")]
    failures = 0
    for step, j in enumerate(order):
        if failures >= max_failures:
            break
        if deadline is not None and step % 256 == 0 and time.perf_counter() > deadline:
            break
        if sel.x[j] > 0.5 or hi[j] < 0.5:
            continue
        pool = pools[var_stratum[j], j >= problem.n_treated]
        avail = pool[(sel.x[pool] < 0.5) & (hi[pool] > 0.5)][:window]
        if len(avail) == 0:
            failures += 1
            continue
        trial = sel.act[:, None] + problem.A[:, [j]] + problem.A[:, avail]
        good = np.all(trial[le] <= b_le + ADMIT_TOL, axis=0) & np.all(
            np.abs(trial[eq] - b_eq) <= ADMIT_TOL, axis=0
        )
        if not good.any():
            failures += 1
            continue
        sel.set(j, 1.0)
        sel.set(avail[int(np.argmax(good))], 1.0)
        failures = 0


def crash_selection(problem: SelectionProblem, seed: int = 0, deadline=None,
                    max_failures: int = 500) -> np.ndarray:
    """Feasible 0/1 starting point for the root LP.

    Every row bounds a sample mean, so a feasible selection on any subset of
    the units is feasible for the whole problem. Large problems therefore
    solve the LP on a seeded quarter of the columns (recursively crash
    started), round it, and then greedily add pairs on the full problem, where
    the tolerance slack (proportional to n) is already large. Below
    CRASH_MIN_VARS columns the greedy starts from the empty selection.
    """
    n = problem.n_vars
    x = np.zeros(n)
    rank_key = np.zeros(n)
    if n >= 4 * CRASH_MIN_VARS:
        rng = np.random.default_rng(seed)
        cols = np.sort(rng.choice(n, size=n // 4, replace=False))
        sub = problem.restrict(cols)
        x_sub = crash_selection(sub, seed, deadline, max_failures)
        lp = solve_lp(sub, deadline=deadline, start=x_sub)
        if lp.status == "optimal":
            xr = round_heuristic(lp, sub)
            if xr[: sub.n_treated].sum() >= x_sub[: sub.n_treated].sum():
                x_sub = xr
            rank_key[cols] = -lp.x
        x[cols] = x_sub
    ids = problem.var_ids
    le = problem.sense == LE
    score = problem.A[le].max(axis=0) if le.any() else np.zeros(n)
    # sampled LP values first, then the worst-row score, then id
    order = sorted(range(n), key=lambda j: (rank_key[j], score[j], ids[j]))
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    sel = _Selection(problem, x)
    if not sel.ok():
        return np.zeros(n)
    _greedy_fill(sel, problem, order, rank, problem.upper, _var_strata(problem), max_failures,
                 deadline=deadline)
    x = np.round(sel.x)
    return x if _strictly_feasible(problem, x) else np.zeros(n)


@dataclass(order=True)
class _Node:
    key: tuple
    fix: tuple = field(compare=False)  # ((var, value), ...)
    depth: int = field(compare=False, default=0)


def _is_integral(x) -> bool:
    return bool(np.all(np.abs(x - np.round(x)) <= INT_TOL))


def _branch_var(x) -> int:
    frac = np.abs(x - np.round(x))
    dist = np.abs(x - 0.5)
    cand = np.flatnonzero(frac > INT_TOL)
    # most fractional, ties to lowest index
    return int(cand[np.argmin(dist[cand])])


def branch_and_bound(
    problem: SelectionProblem,
    time_limit_s: float = 600.0,
    gap_abs: float = 0.0,
    seed: int = 0,
    heuristic_every: int | None = None,
) -> MatchSolution:
    """Best-first branch-and-bound on the LP relaxation.

    Node key is (-bound, creation index) so processing order is fixed. A node is
    pruned when floor(bound) <= incumbent + gap_abs. The returned bound is the
    best proven upper bound on the cardinality, so ``gap == 0`` certifies
    optimality.
    """
    if time_limit_s <= 0:
        raise ValueError("time_limit_s must be positive")
    t0 = time.perf_counter()
    deadline = t0 + time_limit_s
    n = problem.n_vars
    if heuristic_every is None:
        heuristic_every = 1 if n <= 5000 else 25
    info = {"nodes": 0, "lp_iterations": 0, "lp_pivots": 0, "heuristic_hits": 0, "events": []}

    def event(msg):
        stamp = time.perf_counter() - t0
        info["events"].append(f"{stamp:9.3f}s {msg}")
        log.info(msg)

    # empty selection is feasible unless a min_pairs row exists
    zero = np.zeros(n)
    incumbent = zero if _strictly_feasible(problem, zero) else None
    inc_n = 0 if incumbent is not None else -1
    trivial = problem.trivial_bound()
    proven_pruned = -1  # best floor-bound among nodes pruned by bound

    def bounds_for(fix):
        lo, hi = np.zeros(n), problem.upper.copy()
        for j, v in fix:
            lo[j] = hi[j] = v
        return lo, hi

    def offer(x, source):
        nonlocal incumbent, inc_n
        k = int(round(x[: problem.n_treated].sum()))
        if k > inc_n and _strictly_feasible(problem, x):
            incumbent, inc_n = x, k
            event(f"incumbent n={k} ({source})")
            return True
        return False

    if incumbent is not None:
        offer(crash_selection(problem, seed, deadline), "crash start")
    counter = itertools.count()
    heap: list[_Node] = [_Node((-trivial, next(counter)), ())]
    status = "optimal"

    while heap:
        if time.perf_counter() > deadline:
            status = "time-limit"
            break
        node = heapq.heappop(heap)
        parent_bound = -node.key[0]
        if parent_bound <= inc_n + gap_abs:
            proven_pruned = max(proven_pruned, parent_bound)
            continue
        lo, hi = bounds_for(node.fix)
        start = None
        if incumbent is not None and all(incumbent[j] == v for j, v in node.fix):
            start = incumbent
        lp = solve_lp(problem, lo, hi, deadline=deadline, start=start)
        info["nodes"] += 1
        info["lp_iterations"] += lp.iterations
        info["lp_pivots"] += lp.pivots
        if lp.status == "time-limit":
            heapq.heappush(heap, node)
            status = "time-limit"
            break
        if lp.status == "infeasible":
            continue
        if lp.status == "optimal":
            bound = min(parent_bound, math.floor(lp.objective + BOUND_TOL))
        else:
            bound = parent_bound
        if info["nodes"] == 1:
            event(f"root LP objective {lp.objective:.6f} (pivots {lp.pivots}, flips {lp.flips})")
        if bound <= inc_n + gap_abs:
            proven_pruned = max(proven_pruned, bound)
            continue
        integral = lp.status == "optimal" and _is_integral(lp.x)
        if integral and offer(np.round(lp.x), "integral LP"):
            continue
        if info["nodes"] == 1 or (info["nodes"] % heuristic_every == 0) or integral:
            xr = round_heuristic(lp, problem, lo, hi)
            if offer(xr, "rounding"):
                info["heuristic_hits"] += 1
            if bound <= inc_n + gap_abs:
                proven_pruned = max(proven_pruned, bound)
                continue
        if integral:
            # LP point integral but not strictly feasible at verification tolerance
            continue
        j = _branch_var(lp.x)
        for v in (1.0, 0.0):
            heapq.heappush(heap, _Node((-bound, next(counter)), node.fix + ((j, v),), node.depth + 1))

    open_bound = max((-nd.key[0] for nd in heap), default=-1)
    if incumbent is None:
        final = _solution_from_vector(problem, zero, max(open_bound, 0), "infeasible", info, seed)
        final.n = 0
        return final
    bound = max(inc_n, proven_pruned, open_bound)
    if status != "time-limit":
        status = "optimal" if bound == inc_n else "gap-limit"
    info["time_s"] = time.perf_counter() - t0
    event(f"done status={status} n={inc_n} bound={bound} nodes={info['nodes']}")
    return _solution_from_vector(problem, incumbent, bound, status, info, seed)


def enumerate_oracle(problem: SelectionProblem, tol: float = VERIFY_TOL) -> int:
    """Exact optimum by exhaustive enumeration (at most 26 variables).

    Exposed and unexposed subsets are enumerated separately; each row is
    separable, so a pair of subsets is feasible iff the summed row activities
    satisfy every row. Subsets are grouped by their per-stratum counts so only
    count-compatible pairs are compared.
    """
    nT = problem.n_treated
    nC = problem.n_vars - nT
    if nT + nC > 26:
        raise TooLarge(f"enumeration limited to 26 units, got {nT + nC}")
    if nT == 0 or nC == 0:
        return 0
    A, b = problem.A, problem.b
    eq = problem.sense == EQ
    le = ~eq
    allowed = problem.upper > 0.5

    def subsets(cols):
        k = len(cols)
        masks = ((np.arange(2 ** k)[:, None] >> np.arange(k)) & 1).astype(float)
        ok = np.all((masks == 0) | allowed[cols][None, :], axis=1)
        masks = masks[ok]
        return masks, masks @ A[:, cols].T

    mt, at = subsets(np.arange(nT))
    mc, ac = subsets(np.arange(nT, nT + nC))
    card = mt.sum(axis=1).astype(int)

    groups: dict[tuple, list[int]] = {}
    for i, row in enumerate(np.round(-ac[:, eq]).astype(int)):
        groups.setdefault(tuple(row), []).append(i)
    tkeys: dict[tuple, list[int]] = {}
    for i, row in enumerate(np.round(at[:, eq]).astype(int)):
        tkeys.setdefault(tuple(row), []).append(i)
    # equality rows have rhs 0 here except when users add their own; check rhs too
    best = -1
    for key in sorted(tkeys, key=lambda k: -card[tkeys[k][0]]):
        n_here = card[tkeys[key][0]]
        if n_here <= best:
            break
        cidx = groups.get(key)
        if cidx is None:
            continue
        T = at[tkeys[key]][:, le]
        C = ac[cidx][:, le]
        tot = T[:, None, :] + C[None, :, :]
        eq_ok = np.allclose(at[tkeys[key][0]][eq] + ac[cidx[0]][eq], b[eq])
        if eq_ok and np.any(np.all(tot <= b[le] + tol, axis=2)):
            best = n_here
    return max(best, 0)
