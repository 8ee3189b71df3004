"""Propensity-score nearest-neighbour matching, kept as a comparator for retention and balance."""
from __future__ import annotations

import bisect
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .pairing import PairSet

log = logging.getLogger("cardmatch.baseline")

RIDGE = 1e-6
MAX_ITER = 100
GRAD_TOL = 1e-8
SEPARATION_COEF = 30.0
DEFAULT_CALIPER = 0.2


@dataclass
class PropensityModel:
    coefficients: np.ndarray  # intercept first, then one per balance covariate (standardized scale)
    scores: np.ndarray
    ids: tuple[str, ...]
    iterations: int
    grad_norm: float
    converged: bool
    separated: bool = False
    loglik_history: list[float] = field(default_factory=list)

    @property
    def logit(self) -> np.ndarray:
        p = self.scores
        return np.log(p) - np.log1p(-p)


def _loglik(eta, y):
    # log(1 + e^eta) computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(Z: np.ndarray, y: np.ndarray, max_iter: int = MAX_ITER):
    """Logistic MLE by iteratively reweighted least squares.

    Z must already contain the intercept column. Each Newton step is halved
    until the log-likelihood does not decrease. Returns (beta, iterations,
    grad_norm, converged, separated, loglik_history).
    """
    n, p = Z.shape
    beta = np.zeros(p)
    eta = Z @ beta
    history = [_loglik(eta, y)]
    grad_norm = np.inf
    separated = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = 0.5 * (1.0 + np.tanh(eta / 2.0))
        grad = Z.T @ (y - mu)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= GRAD_TOL:
            it -= 1
            break
        w = mu * (1.0 - mu)
        H = (Z * w[:, None]).T @ Z + RIDGE * np.eye(p)
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = beta + t * step
            ll = _loglik(Z @ cand, y)
            if ll >= history[-1] or t < 1e-10:
                break
            t *= 0.5
        if ll < history[-1]:
            break
        beta = cand
        eta = Z @ beta
        history.append(ll)
        if np.max(np.abs(beta)) > SEPARATION_COEF:
            separated = True
            break
    else:
        mu = 0.5 * (1.0 + np.tanh(eta / 2.0))
        grad_norm = float(np.linalg.norm(Z.T @ (y - mu)))
    if not separated:
        mu = 0.5 * (1.0 + np.tanh(eta / 2.0))
        grad_norm = float(np.linalg.norm(Z.T @ (y - mu)))
    return beta, it, grad_norm, grad_norm <= GRAD_TOL, separated, history


def fit_logistic_propensity(dataset: Dataset) -> PropensityModel:
    """Regress exposure on the standardized balance covariates (plus intercept)."""
    if dataset.X.shape[1] == 0:
        raise ValueError("propensity model needs at least one balance covariate")
    y = dataset.exposed.astype(float)
    if y.min() == y.max():
        raise ValueError("both exposure groups must be present")
    Z = np.column_stack([np.ones(len(dataset)), dataset.X])
    beta, it, gnorm, conv, sep, hist = fit_logistic(Z, y)
    if sep:
        warnings.warn("propensity fit diverged (separation); matching proceeds on the flagged model",
                      stacklevel=2)
    scores = 0.5 * (1.0 + np.tanh((Z @ beta) / 2.0))
    scores = np.clip(scores, 1e-15, 1.0 - 1e-15)
    return PropensityModel(beta, scores, dataset.ids, it, gnorm, conv, sep, hist)


@dataclass
class GreedyResult:
    pairs: PairSet
    matched_treated: int
    excluded_treated: int
    caliper_width: float | None


def greedy_nn_match(
    model: PropensityModel,
    dataset: Dataset,
    caliper: float | None = DEFAULT_CALIPER,
    respect_strata: bool = False,
) -> GreedyResult:
    """Greedy 1:1 nearest-neighbour matching on the logit score, without replacement.

    Exposed units are taken in descending score order (ties by id); each takes
    the closest unmatched unexposed unit (ties by id). A match farther than
    caliper * SD(logit) is refused and the exposed unit is excluded.
    """
    lg = model.logit
    width = None
    if caliper is not None:
        sd = float(np.std(lg, ddof=1)) if len(lg) > 1 else 0.0
        width = caliper * sd
    ids = dataset.ids
    strata_of = dataset.exact_keys if respect_strata else [()] * len(dataset)
    pools: dict[tuple, tuple[list, list]] = {}
    for i in sorted(dataset.control_idx, key=lambda i: (lg[i], ids[i])):
        keys, members = pools.setdefault(strata_of[i], ([], []))
        keys.append(lg[i])
        members.append(i)

    treated = sorted(dataset.treated_idx, key=lambda i: (-model.scores[i], ids[i]))
    pairs, dists, keys_out = [], [], []
    excluded = 0
    for t in treated:
        pool = pools.get(strata_of[t])
        if not pool or not pool[0]:
            excluded += 1
            continue
        keys, members = pool
        k = bisect.bisect_left(keys, lg[t])
        best = None
        for j in (k - 1, k):
            if 0 <= j < len(keys):
                d = abs(keys[j] - lg[t])
                cand = (d, ids[members[j]], j)
                if best is None or cand < best:
                    best = cand
        # equal-score neighbours beyond the two adjacent slots may have smaller ids
        d0 = best[0]
        j = best[2]
        lo = j
        while lo - 1 >= 0 and abs(keys[lo - 1] - lg[t]) == d0:
            lo -= 1
        hi = j
        while hi + 1 < len(keys) and abs(keys[hi + 1] - lg[t]) == d0:
            hi += 1
        j = min(range(lo, hi + 1), key=lambda q: ids[members[q]])
        d = abs(keys[j] - lg[t])
        if width is not None and d > width:
            excluded += 1
            continue
        c = members[j]
        del keys[j]
        del members[j]
        pairs.append((ids[t], ids[c]))
        dists.append(float(d))
        keys_out.append(dataset.exact_keys[t] if respect_strata else ())
    ps = PairSet(pairs, dists, keys_out, float(sum(dists)))
    return GreedyResult(ps, len(pairs), excluded, width)
