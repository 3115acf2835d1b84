"""Evaluation metrics: grid divergences, NLPD, HPD coverage, MMD, recovery.

Grid divergences renormalise both densities over the evaluation grid before
comparing, which guarantees non-negativity of the KL estimate.  Coverage uses
density-ranked posterior samples as the membership rule for highest-density
regions.  The MMD uses a Gaussian kernel with the median pairwise distance of
the pooled samples as the bandwidth and the biased V-statistic estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from scipy.stats import binom

__all__ = [
    "EvalGrid",
    "CoverageCurve",
    "grid_kld",
    "grid_ise",
    "nlpd",
    "aggregate_nlpd",
    "hpd_covered",
    "coverage",
    "coverage_curve",
    "coverage_binomial_band",
    "credibility_grid",
    "mmd",
    "median_heuristic",
    "recovery_stats",
]


@dataclass(frozen=True)
class EvalGrid:
    """Equidistant evaluation grid, endpoints included."""

    lo: float
    hi: float
    n_points: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if self.n_points < 2:
            raise ValueError("grid needs at least two points")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_points)

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    @property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w


def _grid_log_masses(logpdf, grid: EvalGrid) -> np.ndarray:
    """log of the renormalised probability masses of the grid cells."""
    lp = np.asarray(logpdf(grid.points), dtype=np.float64)
    if lp.shape != (grid.n_points,):
        raise ValueError("log-density callable must map the grid to one value per point")
    with np.errstate(divide="ignore"):
        lw = lp + np.log(grid.trapezoid_weights)
    total = logsumexp(lw)
    if not np.isfinite(total):
        raise ValueError("log-density is not integrable on the grid")
    return lw - total


def grid_kld(exact_logpdf, approx_logpdf, grid: EvalGrid) -> float:
    """Forward KL divergence between grid-renormalised densities.

    Returns ``inf`` when the approximation places zero mass where the exact
    density does not.
    """
    lp = _grid_log_masses(exact_logpdf, grid)
    lq = _grid_log_masses(approx_logpdf, grid)
    p = np.exp(lp)
    support = p > 0.0
    if np.any(np.isneginf(lq[support])):
        return float("inf")
    return float(np.sum(p[support] * (lp[support] - lq[support])))


def grid_ise(exact_logpdf, approx_logpdf, grid: EvalGrid) -> float:
    """Sum of squared density differences over the grid points."""
    p = np.exp(np.asarray(exact_logpdf(grid.points), dtype=np.float64))
    q = np.exp(np.asarray(approx_logpdf(grid.points), dtype=np.float64))
    return float(np.sum((p - q) ** 2))


def nlpd(posterior_logpdf, theta_true: np.ndarray) -> float:
    """Negative log-density of the true parameter under the posterior."""
    return -float(posterior_logpdf(np.atleast_2d(theta_true))[0])


def aggregate_nlpd(values) -> tuple:
    """Median over finite NLPD values plus the count of excluded ones."""
    values = np.asarray(values, dtype=np.float64)
    finite = values[np.isfinite(values)]
    n_excluded = int(values.size - finite.size)
    if finite.size == 0:
        return float("nan"), n_excluded
    return float(np.median(finite)), n_excluded


def credibility_grid(n_levels: int = 101) -> np.ndarray:
    """Equidistant nominal credibility levels on [0, 1]."""
    return np.linspace(0.0, 1.0, n_levels)


def hpd_covered(sample_logpdfs: np.ndarray, true_logpdf: float, credibilities: np.ndarray) -> np.ndarray:
    """Highest-density membership of the true parameter, per nominal level.

    The posterior samples are ranked by density; the true parameter is inside
    the credibility-c region when its density reaches the ceil(c * n)-th
    ranked sample's density.  Credibility 0 never covers, credibility 1
    always does.
    """
    lps = np.sort(np.asarray(sample_logpdfs, dtype=np.float64))[::-1]
    n = lps.size
    if n < 10:
        raise ValueError("need at least 10 posterior draws for the membership rule")
    credibilities = np.asarray(credibilities, dtype=np.float64)
    k = np.ceil(credibilities * n).astype(int)
    covered = np.empty(credibilities.shape, dtype=bool)
    interior = (k >= 1) & (credibilities < 1.0)
    covered[k < 1] = False
    covered[credibilities >= 1.0] = True
    covered[interior] = true_logpdf >= lps[np.minimum(k[interior], n) - 1]
    return covered


def coverage(posterior_sampler, posterior_logpdf, theta_true, n_draws: int = 2000, credibilities=None) -> np.ndarray:
    """Single-dataset coverage indicators over the credibility grid."""
    credibilities = credibility_grid() if credibilities is None else np.asarray(credibilities)
    draws = posterior_sampler(n_draws)
    sample_lps = np.asarray(posterior_logpdf(draws), dtype=np.float64)
    true_lp = float(posterior_logpdf(np.atleast_2d(theta_true))[0])
    return hpd_covered(sample_lps, true_lp, credibilities)


@dataclass
class CoverageCurve:
    """Nominal credibility levels and the empirical coverage fractions."""

    levels: np.ndarray
    empirical: np.ndarray
    n_datasets: int

    def to_rows(self) -> list:
        return [
            {"nominal": float(a), "empirical": float(b)} for a, b in zip(self.levels, self.empirical)
        ]


def coverage_curve(indicator_rows, credibilities=None) -> CoverageCurve:
    """Average per-dataset coverage indicators into an empirical curve."""
    rows = np.asarray(indicator_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need a (datasets, levels) indicator matrix")
    credibilities = credibility_grid(rows.shape[1]) if credibilities is None else np.asarray(credibilities)
    return CoverageCurve(levels=credibilities, empirical=rows.mean(axis=0), n_datasets=rows.shape[0])


def coverage_binomial_band(n_datasets: int, credibilities, confidence: float = 0.99) -> tuple:
    """Pointwise binomial band for an ideally calibrated posterior."""
    credibilities = np.asarray(credibilities, dtype=np.float64)
    alpha = 0.5 * (1.0 - confidence)
    lo = binom.ppf(alpha, n_datasets, credibilities) / n_datasets
    hi = binom.ppf(1.0 - alpha, n_datasets, credibilities) / n_datasets
    return lo, hi


def median_heuristic(pooled: np.ndarray) -> float:
    """Median pairwise distance of the pooled sample (off-diagonal pairs)."""
    d = cdist(pooled, pooled)
    upper = d[np.triu_indices_from(d, k=1)]
    med = float(np.median(upper))
    return med if med > 0 else 1.0


def mmd(sample_a: np.ndarray, sample_b: np.ndarray, bandwidth: float | None = None) -> float:
    """Gaussian-kernel maximum mean discrepancy (biased V-statistic).

    The bandwidth defaults to the median heuristic on the pooled samples; the
    returned value is the square root of the always-non-negative V-statistic.
    """
    a = np.atleast_2d(np.asarray(sample_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(sample_b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both samples must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples must share the feature dimension")
    if bandwidth is None:
        bandwidth = median_heuristic(np.vstack([a, b]))
    gamma = 1.0 / (2.0 * bandwidth**2)
    k_aa = np.exp(-gamma * cdist(a, a, "sqeuclidean")).mean()
    k_bb = np.exp(-gamma * cdist(b, b, "sqeuclidean")).mean()
    k_ab = np.exp(-gamma * cdist(a, b, "sqeuclidean")).mean()
    return float(np.sqrt(max(k_aa + k_bb - 2.0 * k_ab, 0.0)))


def recovery_stats(theta_true: np.ndarray, estimates: np.ndarray) -> tuple:
    """Pearson r and coefficient of determination per parameter dimension.

    Dimensions with constant truths or estimates get ``nan`` correlations.
    """
    truths = np.atleast_2d(np.asarray(theta_true, dtype=np.float64))
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    if truths.shape != est.shape:
        raise ValueError("truths and estimates must have identical shapes")
    d = truths.shape[1]
    r = np.full(d, np.nan)
    r2 = np.full(d, np.nan)
    for j in range(d):
        t, e = truths[:, j], est[:, j]
        ss_tot = np.sum((t - t.mean()) ** 2)
        if ss_tot > 0:
            r2[j] = 1.0 - np.sum((e - t) ** 2) / ss_tot
            if e.std() > 0:
                r[j] = float(np.corrcoef(t, e)[0, 1])
    return r, r2
