import numpy as np
import pytest

from mlsbi import (
    GandKSimulator,
    LevelBatch,
    MdnConfig,
    MixtureDensityNetwork,
    OrnsteinUhlenbeckSimulator,
    SeedKey,
    Task,
    level_variance,
    mc_loss,
    mlmc_loss,
    simulate_level_batches,
)

from conftest import make_forced_mdn

LOG_2PI = np.log(2 * np.pi)


def _gk_shared_batches(n=40, seed=1):
    """One shared (theta, u) set pushed through both g-and-k fidelities."""
    gk = GandKSimulator()
    key = SeedKey(seed)
    thetas = gk.prior.sample(key.child(0), n)
    noise = gk.sample_noise(key.child(1), n, 1, 1)
    x0 = gk.simulate(thetas, noise, 0)
    x1 = gk.simulate(thetas, noise, 1)
    return thetas, x0, x1


def _random_mdn(seed=3, cond_dim=4):
    cfg = MdnConfig(condition_dim=cond_dim, target_dim=1, hidden_layers=(12,), n_components=2)
    mdn = MixtureDensityNetwork(cfg)
    phi = mdn.init_params(SeedKey(seed))
    phi.values[:] += np.random.default_rng(seed).normal(scale=0.2, size=phi.size)
    return mdn, phi


def test_mc_loss_single_standard_normal_sample():
    mdn, phi = make_forced_mdn()
    batch = LevelBatch(level=0, thetas=np.zeros((1, 1)), x_hi=np.zeros((1, 1, 1)))
    report = mc_loss(mdn, phi, Task("nle"), batch)
    assert np.isclose(report.total, 0.5 * LOG_2PI, rtol=1e-12)


def test_mc_loss_duplication_invariant():
    mdn, phi = _random_mdn()
    thetas, _, x1 = _gk_shared_batches()
    single = mc_loss(mdn, phi, Task("nle"), LevelBatch(0, thetas, x1))
    doubled = mc_loss(
        mdn, phi, Task("nle"), LevelBatch(0, np.tile(thetas, (2, 1)), np.tile(x1, (2, 1, 1)))
    )
    assert np.isclose(single.total, doubled.total, rtol=1e-12)


def test_mc_loss_matches_per_sample_oracle():
    mdn, phi = _random_mdn()
    thetas, _, x1 = _gk_shared_batches(n=13)
    report = mc_loss(mdn, phi, Task("nle"), LevelBatch(0, thetas, x1))
    per_sample = [-float(mdn.logpdf(phi, thetas[i : i + 1], x1[i, 0][None, :])[0]) for i in range(13)]
    assert np.isclose(report.total, np.mean(per_sample), rtol=1e-12)


def test_mlmc_identical_generators_cancel():
    mdn, phi = _random_mdn()
    thetas, _, x1 = _gk_shared_batches()
    batches = [LevelBatch(0, thetas, x1), LevelBatch(1, thetas, x1, x1)]
    report = mlmc_loss(mdn, phi, Task("nle"), batches)
    assert report.h[1] == 0.0
    assert np.isclose(report.total, report.h[0], rtol=1e-15)
    assert np.allclose(report.grads_plus[1], -report.grads_minus[0])


def test_mlmc_telescoping_identity_shared_samples():
    mdn, phi = _random_mdn()
    thetas, x0, x1 = _gk_shared_batches(n=60)
    batches = [LevelBatch(0, thetas, x0), LevelBatch(1, thetas, x1, x0)]
    ml = mlmc_loss(mdn, phi, Task("nle"), batches)
    mc = mc_loss(mdn, phi, Task("nle"), LevelBatch(1, thetas, x1))
    assert abs(ml.total - mc.total) <= 1e-12 * abs(mc.total)
    assert np.allclose(ml.grad_total, mc.grad_total, rtol=1e-10, atol=1e-14)


def test_mlmc_decomposition_additivity():
    mdn, phi = _random_mdn()
    gk = GandKSimulator()
    batches = simulate_level_batches(gk, SeedKey(4), [50, 10])
    report = mlmc_loss(mdn, phi, Task("nle"), batches)
    assert np.isclose(report.total, report.h.sum(), rtol=1e-12)
    assert np.allclose(report.h[1:], report.f_plus[1:] + report.f_minus, rtol=1e-12)
    reconstructed = np.sum(report.grads_plus, axis=0) + np.sum(report.grads_minus, axis=0)
    assert np.array_equal(reconstructed, report.grad_total)


def test_mlmc_unbiasedness_statistical():
    mdn, phi = _random_mdn(seed=6)
    gk = GandKSimulator()
    task = Task("nle")
    estimates = []
    for rep in range(60):
        batches = simulate_level_batches(gk, SeedKey(100 + rep), [80, 10])
        estimates.append(mlmc_loss(mdn, phi, task, batches).total)
    big_batch = LevelBatch(1, *_big_top_level(gk, SeedKey(999), 20_000))
    mc_ref = mc_loss(mdn, phi, task, big_batch)
    se_ml = np.std(estimates, ddof=1) / np.sqrt(len(estimates))
    per_sample = -mdn.logpdf(phi, *task.pairs(big_batch.thetas, big_batch.x_hi))
    se_mc = np.std(per_sample, ddof=1) / np.sqrt(per_sample.size)
    gap = abs(np.mean(estimates) - mc_ref.total)
    assert gap <= 3.0 * np.hypot(se_ml, se_mc)


def _big_top_level(sim, key, n):
    thetas = sim.prior.sample(key.child(0), n)
    noise = sim.sample_noise(key.child(1), n, 1, 1)
    return thetas, sim.simulate(thetas, noise, 1)


def test_level_variance_zero_for_identical_generators():
    mdn, phi = _random_mdn()
    thetas, _, x1 = _gk_shared_batches()
    pilot = LevelBatch(1, thetas, x1, x1)
    assert level_variance(mdn, phi, Task("nle"), pilot) == 0.0


def test_level_variance_zero_for_constant_terms():
    mdn, phi = make_forced_mdn(cond_dim=4)
    thetas = np.tile([[1.0, 1.0, 1.0, 1.0]], (12, 1))
    x = np.zeros((12, 1, 1))
    pilot = LevelBatch(0, thetas, x)
    # identical rows can differ in the last ulp through blocked matmuls
    assert level_variance(mdn, phi, Task("nle"), pilot) < 1e-30


@pytest.mark.parametrize("sim_cls,n", [(GandKSimulator, 800), (OrnsteinUhlenbeckSimulator, 300)])
def test_seed_matching_reduces_level_variance(sim_cls, n):
    sim = sim_cls()
    if sim_cls is GandKSimulator:
        mdn, phi = _random_mdn(seed=8, cond_dim=4)
        task = Task("nle")
    else:
        cfg = MdnConfig(condition_dim=5, target_dim=3, hidden_layers=(12,), n_components=2)
        mdn = MixtureDensityNetwork(cfg)
        phi = mdn.init_params(SeedKey(8))
        phi.values[:] += np.random.default_rng(8).normal(scale=0.2, size=phi.size)
        task = Task("npe", "ou_logspace5")
    coupled = simulate_level_batches(sim, SeedKey(50), [1, n])[1]
    broken = simulate_level_batches(sim, SeedKey(50), [1, n], couple=False)[1]
    v_coupled = level_variance(mdn, phi, task, coupled)
    v_broken = level_variance(mdn, phi, task, broken)
    assert v_coupled < v_broken


def test_mlmc_validation_errors():
    mdn, phi = _random_mdn()
    thetas, x0, x1 = _gk_shared_batches(n=10)
    with pytest.raises(ValueError):
        mlmc_loss(mdn, phi, Task("nle"), [])
    with pytest.raises(ValueError):  # missing level 0
        mlmc_loss(mdn, phi, Task("nle"), [LevelBatch(1, thetas, x1, x0)])
    with pytest.raises(ValueError):  # level 1 lacks coupled x_lo
        mlmc_loss(mdn, phi, Task("nle"), [LevelBatch(0, thetas, x0), LevelBatch(1, thetas, x1)])
    with pytest.raises(ValueError):  # pilot too small
        level_variance(mdn, phi, Task("nle"), LevelBatch(0, thetas[:1], x0[:1]))


def test_npe_task_pairs_summary():
    task = Task("npe", "gk_quantiles4")
    thetas = np.zeros((3, 4))
    x = np.random.default_rng(0).normal(size=(3, 100, 1))
    conditions, targets = task.pairs(thetas, x)
    assert conditions.shape == (3, 4)
    assert targets is thetas


def test_nle_task_requires_single_observation():
    task = Task("nle")
    with pytest.raises(ValueError):
        task.pairs(np.zeros((3, 4)), np.zeros((3, 2, 1)))
