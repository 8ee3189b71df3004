"""Optimal 1:1 pairing of selected units within exact-match strata."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, build_strata
from .errors import UnbalancedStratum

TIE_TOL = 1e-10


@dataclass
class PairSet:
    pairs: list[tuple[str, str]]
    distances: list[float]
    strata: list[tuple[str, ...]]  # stratum key of each pair
    total_distance: float
    per_stratum: dict[tuple[str, ...], float] = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)


def distance_matrix(treated: np.ndarray, controls: np.ndarray, metric: str = "standardized_l1") -> np.ndarray:
    """Pairwise distances between rows of two standardized covariate blocks."""
    treated = np.atleast_2d(np.asarray(treated, dtype=float))
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if treated.shape[1] == 0:
        return np.zeros((len(treated), len(controls)))
    if metric == "standardized_l1":
        out = np.zeros((len(treated), len(controls)))
        for k in range(treated.shape[1]):
            out += np.abs(treated[:, k, None] - controls[None, :, k])
        return out
    if metric == "standardized_l2":
        out = np.zeros((len(treated), len(controls)))
        for k in range(treated.shape[1]):
            out += (treated[:, k, None] - controls[None, :, k]) ** 2
        return np.sqrt(out)
    raise ValueError(f"unknown metric {metric!r}")


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimum-cost perfect matching on a square matrix by shortest augmenting paths.

    Rows are inserted one at a time; each insertion runs a Dijkstra search over
    reduced costs ``cost[i, j] - u[i] - v[j]`` (kept >= 0) and augments along the
    shortest path. Returns (col_of_row, u, v).
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) assigned to column j; column 0 is virtual
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=int)
    col_of_row[p[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def lexicographic_optimum(cost: np.ndarray, col_of_row: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Among optimal assignments, the one with the lexicographically smallest column sequence.

    Optimal assignments are exactly the perfect matchings of the equality
    subgraph (zero reduced cost under optimal duals). Rows are fixed in order;
    row i takes the smallest equality-edge column that can be freed by an
    alternating path through rows after i.
    """
    n = len(col_of_row)
    scale = max(1.0, float(np.abs(cost).max())) if n else 1.0
    eq = (cost - u[:, None] - v[None, :]) <= TIE_TOL * scale
    match = col_of_row.copy()
    owner = np.empty(n, dtype=int)
    owner[match] = np.arange(n)
    for i in range(n):
        c0 = match[i]
        options = np.flatnonzero(eq[i, :c0])
        if len(options) == 0:
            continue
        # columns that can be vacated toward c0 by shifting rows > i
        parent = np.full(n, -1)
        reach = np.zeros(n, dtype=bool)
        reach[c0] = True
        frontier = np.array([c0])
        row_open = np.zeros(n, dtype=bool)
        row_open[i + 1:] = True
        row_open[owner[c0]] = False
        while len(frontier) and not reach[options[0]]:
            hits = row_open & eq[:, frontier].any(axis=1)
            rows = np.flatnonzero(hits)
            if len(rows) == 0:
                break
            row_open[rows] = False
            new_cols = match[rows]
            keep = ~reach[new_cols]
            rows, new_cols = rows[keep], new_cols[keep]
            sub = eq[np.ix_(rows, frontier)]
            parent[new_cols] = frontier[np.argmax(sub, axis=1)]
            reach[new_cols] = True
            frontier = new_cols
        ok = options[reach[options]]
        if len(ok) == 0:
            continue
        j = int(ok[0])
        # shift along the path j -> parent[j] -> ... -> c0
        col = j
        moving = owner[col]
        match[i] = j
        owner[j] = i
        while col != c0:
            nxt = parent[col]
            match[moving] = nxt
            prev_owner = owner[nxt]
            owner[nxt] = moving
            moving = prev_owner
            col = nxt
    return match


def pair_within_strata(solution, dataset: Dataset, metric: str = "standardized_l1") -> PairSet:
    """Minimum-distance 1:1 pairs inside each stratum; never changes the selection."""
    pos = dataset.index_of()
    chosen = np.zeros(len(dataset), dtype=bool)
    chosen[[pos[t] for t in solution.treated_ids]] = True
    chosen[[pos[c] for c in solution.control_ids]] = True
    pairs, dists, keys = [], [], []
    per = {}
    for s in build_strata(dataset, warn=False):
        t = [i for i in s.treated if chosen[i]]
        c = [i for i in s.control if chosen[i]]
        if len(t) != len(c):
            raise UnbalancedStratum(f"stratum {s.key!r}: {len(t)} exposed vs {len(c)} unexposed selected")
        if not t:
            continue
        t = sorted(t, key=lambda i: dataset.ids[i])
        c = sorted(c, key=lambda i: dataset.ids[i])
        cost = distance_matrix(dataset.X[t], dataset.X[c], metric)
        col, u, v = solve_assignment(cost)
        col = lexicographic_optimum(cost, col, u, v)
        total = 0.0
        for r, j in enumerate(col):
            pairs.append((dataset.ids[t[r]], dataset.ids[c[j]]))
            dists.append(float(cost[r, j]))
            keys.append(s.key)
            total += float(cost[r, j])
        per[s.key] = total
    return PairSet(pairs, dists, keys, float(sum(dists)), per)
