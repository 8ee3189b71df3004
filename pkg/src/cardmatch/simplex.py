"""Bounded-variable revised primal simplex for the selection LP relaxation.

The relaxation has few rows (strata plus a handful of balance rows) and up to
~1e5 columns, so the basis inverse is kept dense and the reduced costs are
priced over all columns at once. A nonbasic variable that moves across its
whole [lower, upper] range without blocking a basic variable is a *bound flip*:
the basis and the duals are unchanged, so consecutive flips from one pricing
pass are applied in a single vectorized step. This is exactly what Dantzig
pricing would do one variable at a time.

Pricing is Dantzig (largest reduced cost, ties to lowest index). After
``5 * (rows + cols)`` iterations the solver switches to Bland's rule, which
cannot cycle.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .problem import EQ, SelectionProblem

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 50
FLIP_BLOCK = 512
PRICE_TOP = 256


class IterationLimit(Exception):
    pass


@dataclass
class LpSolution:
    x: np.ndarray  # structural variables
    objective: float
    status: str  # "optimal" | "iteration-limit" | "infeasible" | "time-limit"
    basis: np.ndarray  # indices of basic columns (structural < n <= logical < n+m <= artificial)
    iterations: int
    pivots: int
    flips: int
    used_bland: bool = False
    duals: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "iteration-limit")


class _Simplex:
    def __init__(self, A, b, sense, cost, lower, upper, deadline=None, max_iter=None, start=None):
        m, n = A.shape
        self.m, self.n = m, n
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.cost_struct = np.asarray(cost, dtype=float)
        self.deadline = deadline
        # columns: n structural | m logical | m artificial
        self.lo = np.concatenate([lower, np.zeros(2 * m)])
        hi_log = np.where(np.asarray(sense) == EQ, 0.0, np.inf)
        self.hi = np.concatenate([upper, hi_log, np.zeros(m)])
        self.sigma = np.ones(m)  # artificial column sign
        self.x = self.lo.copy()
        if start is not None:
            # crash start: structurals begin at the given 0/1 point, logicals absorb the residual
            self.x[:n] = np.clip(start, lower, upper)
        self.iterations = self.pivots = self.flips = 0
        self.bland_after = 5 * (m + n)
        self.max_iter = max_iter if max_iter is not None else 50 * (m + n) + 1000

        resid = self.b - self.A @ self.x[:n]
        basis = np.empty(m, dtype=int)
        for i in range(m):
            r = resid[i]
            j_log, j_art = n + i, n + m + i
            if self.lo[j_log] - FEAS_TOL <= r <= self.hi[j_log] + FEAS_TOL:
                basis[i] = j_log
                self.x[j_log] = r
            else:
                # logical parked at its nearest bound, artificial absorbs the rest
                s = self.hi[j_log] if r > self.hi[j_log] else self.lo[j_log]
                self.x[j_log] = s
                self.sigma[i] = 1.0 if r - s > 0 else -1.0
                self.hi[j_art] = np.inf
                self.x[j_art] = abs(r - s)
                basis[i] = j_art
        self.basis = basis
        self.is_basic = np.zeros(n + 2 * m, dtype=bool)
        self.is_basic[basis] = True
        self.Binv = np.diag(1.0 / self._column_block(basis).diagonal()) if m else np.zeros((0, 0))
        self._since_refactor = 0

    # columns ---------------------------------------------------------------
    def _column_block(self, cols) -> np.ndarray:
        cols = np.asarray(cols)
        out = np.zeros((self.m, len(cols)))
        n, m = self.n, self.m
        s = cols < n
        out[:, s] = self.A[:, cols[s]]
        lg = (cols >= n) & (cols < n + m)
        out[cols[lg] - n, np.flatnonzero(lg)] = 1.0
        ar = cols >= n + m
        rows = cols[ar] - n - m
        out[rows, np.flatnonzero(ar)] = self.sigma[rows]
        return out

    def _refactor(self):
        B = self._column_block(self.basis)
        self.Binv = np.linalg.inv(B)
        self.x[self.basis] = self.Binv @ (self.b - self._nonbasic_product())
        self._since_refactor = 0

    def _nonbasic_product(self) -> np.ndarray:
        n, m = self.n, self.m
        xs = np.where(self.is_basic[:n], 0.0, self.x[:n])
        out = self.A @ xs
        lg = ~self.is_basic[n: n + m]
        out = out + np.where(lg, self.x[n: n + m], 0.0)
        ar = ~self.is_basic[n + m:]
        out = out + np.where(ar, self.x[n + m:] * self.sigma, 0.0)
        return out

    # pricing -------------------------------------------------------------------
    def _reduced_costs(self, cost) -> np.ndarray:
        n, m = self.n, self.m
        y = cost[self.basis] @ self.Binv
        d = np.empty(n + 2 * m)
        d[:n] = cost[:n] - y @ self.A
        d[n: n + m] = cost[n: n + m] - y
        d[n + m:] = cost[n + m:] - y * self.sigma
        d[self.basis] = 0.0
        return d

    def _eligible(self, d) -> tuple[np.ndarray, np.ndarray]:
        at_lo = self.x <= self.lo + FEAS_TOL
        at_hi = self.x >= self.hi - FEAS_TOL
        movable = (self.hi - self.lo) > FEAS_TOL
        up = (d > OPT_TOL) & at_lo & movable & ~self.is_basic
        down = (d < -OPT_TOL) & at_hi & movable & ~self.is_basic
        cand = np.flatnonzero(up | down)
        return cand, np.abs(d[cand])

    # main loop -------------------------------------------------------------------
    def run(self, cost) -> str:
        while True:
            if self.deadline is not None and time.perf_counter() > self.deadline:
                return "time-limit"
            if self.iterations >= self.max_iter:
                return "iteration-limit"
            bland = self.iterations >= self.bland_after
            d = self._reduced_costs(cost)
            cand, score = self._eligible(d)
            if len(cand) == 0:
                return "optimal"
            if bland:
                order = cand  # already ascending
            elif len(cand) > PRICE_TOP:
                # top PRICE_TOP by |d| (ties to lowest index); the rest are priced next pass
                kth = np.partition(score, len(score) - PRICE_TOP)[len(score) - PRICE_TOP]
                keep = score >= kth
                c2, s2 = cand[keep], score[keep]
                order = c2[np.lexsort((c2, -s2))][:PRICE_TOP]
            else:
                order = cand[np.lexsort((cand, -score))]
            status = self._process(order, d, bland)
            if status is not None:
                return status

    def _process(self, order, d, bland) -> str | None:
        """Apply leading bound flips of `order` in bulk, then one basis change (or none)."""
        basis = self.basis
        lo_b, hi_b = self.lo[basis], self.hi[basis]
        start = 0
        while start < len(order):
            block = order[start: start + FLIP_BLOCK]
            direction = np.where(d[block] > 0, 1.0, -1.0)
            span = self.hi[block] - self.lo[block]
            finite = np.isfinite(span)
            W = self.Binv @ self._column_block(block)
            steps = np.cumsum(W * (direction * np.where(finite, span, 0.0)), axis=1)
            xb = self.x[basis][:, None] - steps
            bad = np.any((xb < lo_b[:, None] - FEAS_TOL) | (xb > hi_b[:, None] + FEAS_TOL), axis=0)
            bad |= ~finite  # an unbounded column can never simply flip
            first = int(np.argmax(bad)) if bad.any() else len(block)
            if first > 0:
                flips = block[:first]
                self.x[flips] = np.where(direction[:first] > 0, self.hi[flips], self.lo[flips])
                self.x[basis] = xb[:, first - 1]
                self.flips += first
                self.iterations += first
            if first < len(block):
                j = int(block[first])
                self._pivot(j, direction[first], W[:, first], bland)
                return None
            start += FLIP_BLOCK
            if self.iterations >= self.max_iter:
                return None
        return None

    def _pivot(self, j, direction, w, bland):
        basis = self.basis
        xb = self.x[basis]
        lo_b, hi_b = self.lo[basis], self.hi[basis]
        dw = direction * w
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.full(self.m, np.inf)
            dec = dw > PIVOT_TOL
            ratio[dec] = (xb[dec] - lo_b[dec]) / dw[dec]
            inc = dw < -PIVOT_TOL
            ratio[inc] = (hi_b[inc] - xb[inc]) / -dw[inc]
        ratio = np.maximum(ratio, 0.0)
        theta = ratio.min() if self.m else np.inf
        span = self.hi[j] - self.lo[j]
        self.iterations += 1
        if span <= theta:
            # blocked only by its own bound: a flip (can happen at the tolerance boundary)
            self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
            self.x[basis] = xb - span * dw
            self.flips += 1
            return
        if not np.isfinite(theta):
            raise ArithmeticError("LP relaxation unbounded; bounds are inconsistent")
        ties = np.flatnonzero(ratio <= theta + 1e-12)
        if bland:
            r = int(ties[np.argmin(basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(w[ties]))])
        leaving = basis[r]
        self.x[basis] = xb - theta * dw
        self.x[j] = self.x[j] + direction * theta
        # leaving variable lands on whichever bound it hit
        self.x[leaving] = self.lo[leaving] if dw[r] > 0 else self.hi[leaving]
        basis[r] = j
        self.is_basic[leaving] = False
        self.is_basic[j] = True
        self.pivots += 1
        self._update_inverse(r, w)

    def _update_inverse(self, r, w):
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self._refactor()
            return
        piv = w[r]
        Binv = self.Binv
        row = Binv[r] / piv
        Binv -= np.outer(w, row)
        Binv[r] = row

    def structural(self) -> np.ndarray:
        return self.x[: self.n].copy()


def _solve(A, b, sense, c, lo, hi, deadline, max_iter, start):
    m, n = A.shape
    sx = _Simplex(A, b, sense, c, lo, hi, deadline, max_iter, start)
    total = n + 2 * m
    if np.any(sx.hi[n + m:] > 0):
        phase1 = np.zeros(total)
        phase1[n + m:] = -1.0
        status = sx.run(phase1)
        if status in ("time-limit", "iteration-limit"):
            return sx, status, None
        sx._refactor()
        if sx.x[n + m:].sum() > FEAS_TOL * max(1, m):
            return sx, "infeasible", None
        sx.hi[n + m:] = 0.0
        sx.x[n + m:] = 0.0
    cost = np.zeros(total)
    cost[:n] = c
    status = sx.run(cost)
    sx._refactor()
    y = cost[sx.basis] @ sx.Binv if m else np.zeros(0)
    return sx, status, y


def solve_lp(
    problem: SelectionProblem,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    deadline: float | None = None,
    max_iter: int | None = None,
    start: np.ndarray | None = None,
) -> LpSolution:
    """Optimal point of the continuous relaxation with optional tightened bounds.

    `start` is an optional 0/1 point used as the initial nonbasic values (rows
    it violates are repaired by phase one); the default is the all-zero point.
    """
    n, m = problem.n_vars, problem.n_rows
    lo = np.zeros(n) if lower is None else np.asarray(lower, dtype=float)
    hi = problem.upper.copy() if upper is None else np.minimum(upper, problem.upper)
    if np.any(lo > hi + FEAS_TOL):
        return LpSolution(lo.copy(), -np.inf, "infeasible", np.zeros(0, dtype=int), 0, 0, 0)

    sx, status, y = _solve(problem.A, problem.b, problem.sense, problem.c, lo, hi, deadline, max_iter, start)
    x = np.clip(sx.structural(), lo, hi)
    objective = float(problem.c @ x) if status in ("optimal", "iteration-limit") else -np.inf
    return LpSolution(
        x=x,
        objective=objective,
        status=status,
        basis=sx.basis.copy(),
        iterations=sx.iterations,
        pivots=sx.pivots,
        flips=sx.flips,
        used_bland=sx.iterations >= sx.bland_after,
        duals=y,
    )
