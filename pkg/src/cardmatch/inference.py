"""Outcome tests on a matched sample: two-proportion z, McNemar, paired t."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import special

EXACT_MCNEMAR_MAX = 25


@dataclass
class OutcomeReport:
    test: str
    n_pairs: int
    statistic: float
    p_value: float
    events: tuple[int, int] | None = None
    proportions: tuple[float, float] | None = None
    means: tuple[float, float] | None = None
    risk_difference: float | None = None
    estimate: float | None = None
    discordant: tuple[int, int] | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if v is not None}
        for k in ("events", "proportions", "means", "discordant"):
            if k in out:
                out[k] = list(out[k])
        return out


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal, via erfc (no cancellation in the tail)."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def t_cdf(t: float, df: float) -> float:
    return float(special.stdtr(df, t))


def two_proportion_ztest(events_t: int, events_c: int, n: int, continuity: bool = False) -> OutcomeReport:
    """Pooled two-sample z-test for proportions with n units per group; two-sided P."""
    if n < 1 or not (0 <= events_t <= n and 0 <= events_c <= n):
        raise ValueError("need n >= 1 and 0 <= events <= n")
    p1, p2 = events_t / n, events_c / n
    pooled = (events_t + events_c) / (2 * n)
    rep = OutcomeReport("ztest", n, 0.0, 1.0, (events_t, events_c), (p1, p2), risk_difference=p1 - p2)
    if pooled in (0.0, 1.0):
        rep.flags.append("DegenerateCounts")
        return rep
    se = math.sqrt(pooled * (1 - pooled) * 2.0 / n)
    diff = p1 - p2
    if continuity:
        diff = math.copysign(max(abs(diff) - 1.0 / n, 0.0), diff)
    z = diff / se
    rep.statistic = z
    rep.p_value = min(1.0, 2.0 * normal_sf(abs(z)))
    return rep


def mcnemar_exact_p(b: int, c: int) -> float:
    """Two-sided exact binomial P on discordant counts, computed in exact rational arithmetic."""
    total = b + c
    k = min(b, c)
    tail = Fraction(sum(math.comb(total, i) for i in range(k + 1)), 2 ** total)
    return float(min(Fraction(1), 2 * tail))


def mcnemar_test(b: int, c: int, exact: bool | None = None, continuity: bool = False) -> OutcomeReport:
    """McNemar test from discordant pair counts (b: exposed-only events, c: unexposed-only).

    Exact binomial P when b + c <= 25 (unless `exact` says otherwise), else the
    chi-square approximation.
    """
    if b < 0 or c < 0:
        raise ValueError("discordant counts must be nonnegative")
    total = b + c
    rep = OutcomeReport("mcnemar", 0, 0.0, 1.0, discordant=(b, c))
    if total == 0:
        rep.flags.append("NoDiscordantPairs")
        return rep
    num = abs(b - c) - (1 if continuity else 0)
    chi2 = max(num, 0) ** 2 / total
    rep.statistic = chi2
    use_exact = total <= EXACT_MCNEMAR_MAX if exact is None else exact
    if use_exact:
        rep.test = "mcnemar-exact"
        rep.p_value = mcnemar_exact_p(b, c)
    else:
        rep.test = "mcnemar-chi2"
        rep.p_value = min(1.0, math.erfc(math.sqrt(chi2 / 2.0)))
    return rep


def paired_mean_difference(diffs) -> OutcomeReport:
    """Paired t-test on within-pair differences (exposed minus unexposed).

    Zero variance: P = 1 when every difference is 0, P = 0 when they all equal
    the same nonzero value; both are flagged ZeroVariance.
    """
    d = np.asarray(diffs, dtype=float)
    n = len(d)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    rep = OutcomeReport("paired-t", n, 0.0, 1.0, estimate=mean)
    if sd == 0.0:
        rep.flags.append("ZeroVariance")
        if mean != 0.0:
            rep.statistic = math.copysign(math.inf, mean)
            rep.p_value = 0.0
        return rep
    t = mean / (sd / math.sqrt(n))
    rep.statistic = t
    rep.p_value = min(1.0, 2.0 * t_cdf(-abs(t), n - 1))
    return rep


def analyze_pairs(pairs, dataset, test: str = "mcnemar", continuity: bool = False) -> OutcomeReport:
    """Run the requested test on the outcome column of a paired sample."""
    if dataset.outcome is None:
        raise ValueError("dataset has no outcome column")
    pos = dataset.index_of()
    yt = np.array([dataset.outcome[pos[t]] for t, _ in pairs.pairs])
    yc = np.array([dataset.outcome[pos[c]] for _, c in pairs.pairs])
    n = len(yt)
    if test == "paired-t":
        rep = paired_mean_difference(yt - yc)
        rep.means = (float(yt.mean()), float(yc.mean()))
        return rep
    if not np.all(np.isin(np.concatenate([yt, yc]), (0.0, 1.0))):
        raise ValueError(f"test {test!r} needs a binary 0/1 outcome")
    et, ec = int(yt.sum()), int(yc.sum())
    if test == "ztest":
        return two_proportion_ztest(et, ec, n, continuity)
    if test == "mcnemar":
        b = int(np.sum((yt == 1) & (yc == 0)))
        c = int(np.sum((yt == 0) & (yc == 1)))
        rep = mcnemar_test(b, c, continuity=continuity)
        rep.n_pairs = n
        rep.events = (et, ec)
        if n:
            rep.proportions = (et / n, ec / n)
            rep.risk_difference = (et - ec) / n
        return rep
    raise ValueError(f"unknown test {test!r}")
