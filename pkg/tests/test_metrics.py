import numpy as np
import pytest
from scipy.stats import norm

from mlsbi import (
    EvalGrid,
    MdnConfig,
    MixtureDensityNetwork,
    SeedKey,
    aggregate_nlpd,
    coverage_binomial_band,
    coverage_curve,
    credibility_grid,
    grid_ise,
    grid_kld,
    hpd_covered,
    median_heuristic,
    mmd,
    nlpd,
    recovery_stats,
)

GRID = EvalGrid(-30.0, 30.0, 2000)


def _gauss_logpdf(mu, sigma=1.0):
    return lambda xs: norm.logpdf(xs, loc=mu, scale=sigma)


# ---------------------------------------------------------------------------
# Grid divergences


def test_kld_identical_densities_zero():
    f = _gauss_logpdf(0.0)
    assert grid_kld(f, f, GRID) <= 1e-12


def test_kld_gaussian_shift_closed_form():
    # KL(N(0,1) || N(0.5,1)) = 0.125
    value = grid_kld(_gauss_logpdf(0.0), _gauss_logpdf(0.5), GRID)
    assert abs(value - 0.125) < 1e-3


def test_kld_infinite_when_support_missing():
    p = _gauss_logpdf(0.0)
    q = lambda xs: np.where(np.abs(xs) < 1.0, norm.logpdf(xs), -np.inf)
    assert grid_kld(p, q, GRID) == np.inf


def test_kld_nonnegative_on_random_estimator_pairs():
    rng = np.random.default_rng(0)
    cfg = MdnConfig(condition_dim=1, target_dim=1, hidden_layers=(8,), n_components=3)
    mdn = MixtureDensityNetwork(cfg)
    cond = np.zeros((GRID.n_points, 1))
    for i in range(20):
        p1 = mdn.init_params(SeedKey(2 * i))
        p2 = mdn.init_params(SeedKey(2 * i + 1))
        p1.values[:] += rng.normal(scale=0.5, size=p1.size)
        p2.values[:] += rng.normal(scale=0.5, size=p2.size)
        f = lambda xs: mdn.logpdf(p1, cond, xs[:, None])
        g = lambda xs: mdn.logpdf(p2, cond, xs[:, None])
        assert grid_kld(f, g, GRID) >= 0.0


def test_ise_zero_and_symmetry():
    f = _gauss_logpdf(0.0)
    g = _gauss_logpdf(1.0)
    assert grid_ise(f, f, GRID) == 0.0
    assert np.isclose(grid_ise(f, g, GRID), grid_ise(g, f, GRID), rtol=1e-12)


def test_ise_against_quadrature_oracle():
    # q = 0: the statistic is the sum of squared normal densities on the grid,
    # which approaches (1 / (2 sqrt(pi))) / dx as the grid refines
    zero = lambda xs: np.full(xs.shape, -np.inf)
    value = grid_ise(_gauss_logpdf(0.0), zero, GRID)
    oracle = (1.0 / (2.0 * np.sqrt(np.pi))) / GRID.dx
    assert abs(value - oracle) / oracle < 1e-3


# ---------------------------------------------------------------------------
# NLPD


def test_nlpd_standard_normal():
    f = lambda thetas: norm.logpdf(thetas[:, 0])
    assert np.isclose(nlpd(f, np.array([0.0])), 0.5 * np.log(2 * np.pi), rtol=1e-12)


def test_nlpd_monotone_in_distance():
    f = lambda thetas: norm.logpdf(thetas[:, 0])
    values = [nlpd(f, np.array([d])) for d in (0.0, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(values) > 0)


def test_nlpd_median_robust_to_infinities():
    values = list(np.linspace(0.0, 1.0, 501))
    med, excluded = aggregate_nlpd(values + [np.inf])
    assert med == np.median(values)
    assert excluded == 1


# ---------------------------------------------------------------------------
# HPD coverage


def test_coverage_endpoints_exact():
    lps = np.random.default_rng(1).normal(size=2000)
    creds = credibility_grid()
    covered = hpd_covered(lps, true_logpdf=lps.max() + 1.0, credibilities=creds)
    assert covered[0] == False  # credibility 0 never covers
    assert covered[-1] == True  # credibility 1 always covers


def test_coverage_needs_enough_draws():
    with pytest.raises(ValueError):
        hpd_covered(np.zeros(5), 0.0, credibility_grid())


def test_coverage_calibrated_gaussian_posterior():
    # true parameter and samples drawn from the same Gaussian: the empirical
    # curve must follow the diagonal within the 99% binomial band
    rng = np.random.default_rng(2)
    creds = credibility_grid()
    n_datasets = 400
    rows = []
    for _ in range(n_datasets):
        true = rng.normal()
        draws = rng.normal(size=2000)
        rows.append(hpd_covered(norm.logpdf(draws), norm.logpdf(true), creds))
    curve = coverage_curve(np.asarray(rows), creds)
    lo, hi = coverage_binomial_band(n_datasets, creds)
    inside = (curve.empirical >= lo) & (curve.empirical <= hi)
    assert inside.sum() >= 95


def test_coverage_overconfident_posterior_below_diagonal():
    rng = np.random.default_rng(3)
    creds = credibility_grid()
    rows = []
    for _ in range(300):
        true = rng.normal()  # truth has std 1
        draws = 0.5 * rng.normal(size=2000)  # posterior claims std 0.5
        lp = norm.logpdf(draws, scale=0.5)
        rows.append(hpd_covered(lp, norm.logpdf(true, scale=0.5), creds))
    curve = coverage_curve(np.asarray(rows), creds)
    mid = (creds > 0.2) & (creds < 0.95)
    assert np.all(curve.empirical[mid] < creds[mid])


# ---------------------------------------------------------------------------
# MMD


def test_mmd_identical_samples_zero():
    a = np.random.default_rng(4).normal(size=(500, 2))
    assert mmd(a, a) <= 1e-12


def test_mmd_separates_shifted_gaussians():
    rng = np.random.default_rng(5)
    null_values, alt_values = [], []
    for _ in range(20):
        a = rng.normal(size=(500, 1))
        b = rng.normal(size=(500, 1))
        c = rng.normal(loc=5.0, size=(500, 1))
        null_values.append(mmd(a, b))
        alt_values.append(mmd(a, c))
    null_values, alt_values = np.array(null_values), np.array(alt_values)
    threshold = null_values.mean() + 5.0 * null_values.std(ddof=1)
    assert np.all(alt_values > threshold)


def test_mmd_permutation_invariant():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(100, 3))
    b = rng.normal(size=(120, 3))
    perm_a = a[rng.permutation(100)]
    perm_b = b[rng.permutation(120)]
    assert np.isclose(mmd(a, b), mmd(perm_a, perm_b), rtol=1e-9)


def test_mmd_validation():
    with pytest.raises(ValueError):
        mmd(np.zeros((0, 1)), np.zeros((5, 1)))
    with pytest.raises(ValueError):
        mmd(np.zeros((5, 1)), np.zeros((5, 2)))


def test_median_heuristic_positive_fallback():
    same = np.zeros((10, 2))
    assert median_heuristic(same) == 1.0


# ---------------------------------------------------------------------------
# Recovery


def test_recovery_perfect():
    truths = np.random.default_rng(7).uniform(0, 3, size=(50, 2))
    r, r2 = recovery_stats(truths, truths)
    assert np.allclose(r, 1.0)
    assert np.allclose(r2, 1.0)


def test_recovery_anticorrelated():
    truths = np.linspace(0.0, 3.0, 21)[:, None]
    r, _ = recovery_stats(truths, truths[::-1])
    assert np.isclose(r[0], -1.0)


def test_recovery_noise_injection_oracle():
    rng = np.random.default_rng(8)
    truths = rng.uniform(0, 3, size=(500, 1))
    estimates = truths + rng.normal(scale=0.1, size=truths.shape)
    r, r2 = recovery_stats(truths, estimates)
    # var(U(0,3)) = 0.75: rho = 1/sqrt(1 + 0.01/0.75), R2 = 1 - 0.01/0.75
    assert abs(r[0] - 1.0 / np.sqrt(1.0 + 0.01 / 0.75)) < 0.01
    assert abs(r2[0] - (1.0 - 0.01 / 0.75)) < 0.01


def test_recovery_constant_column_missing():
    truths = np.ones((10, 1))
    r, r2 = recovery_stats(truths, truths + 0.1)
    assert np.isnan(r[0]) and np.isnan(r2[0])


def test_eval_grid_validation():
    with pytest.raises(ValueError):
        EvalGrid(1.0, 0.0, 10)
    with pytest.raises(ValueError):
        EvalGrid(0.0, 1.0, 1)
    grid = EvalGrid(0.0, 1.0, 3)
    assert np.allclose(grid.points, [0.0, 0.5, 1.0])
    assert np.isclose(grid.trapezoid_weights.sum(), 1.0)
