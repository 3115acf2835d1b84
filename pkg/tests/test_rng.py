import numpy as np
import pytest
from scipy.special import ndtri

from mlsbi import NoiseBlock, SeedKey, derive_stream, sample_noise


def test_derive_appends_child():
    key = SeedKey(7)
    assert derive_stream(key, 0) == SeedKey(7, (0,))
    assert key.child(3).child(1) == SeedKey(7, (3, 1))


def test_derive_is_deterministic():
    key = SeedKey(7)
    assert derive_stream(key, 0) == derive_stream(key, 0)


def test_sibling_streams_uncorrelated():
    # CLT bound 3/sqrt(1e4) ~ 0.03; allow 0.05
    a = sample_noise(SeedKey(7, (0,)), 10_000, 1, "std_normal").values[:, 0]
    b = sample_noise(SeedKey(7, (1,)), 10_000, 1, "std_normal").values[:, 0]
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_sample_noise_deterministic():
    a = sample_noise(SeedKey(5), 3, 2)
    b = sample_noise(SeedKey(5), 3, 2)
    assert np.array_equal(a.values, b.values)


def test_prefix_sharing_bitwise():
    key = SeedKey(5)
    small = sample_noise(key, 11, 2)
    big = sample_noise(key, 11, 5)
    assert np.array_equal(big.values[:, :2], small.values)
    assert np.array_equal(big.prefix(2).values, small.values)


def test_prefix_sharing_normal_kind():
    key = SeedKey(17, (4,))
    small = sample_noise(key, 6, 3, "std_normal")
    big = sample_noise(key, 6, 9, "std_normal")
    assert np.array_equal(big.values[:, :3], small.values)


def test_normal_is_inverse_cdf_of_uniform():
    key = SeedKey(9)
    uniform = sample_noise(key, 50, 4, "uniform01")
    normal = sample_noise(key, 50, 4, "std_normal")
    assert np.array_equal(normal.values, ndtri(uniform.values))


def test_std_normal_moments():
    draws = sample_noise(SeedKey(123), 100_000, 1, "std_normal").values
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1.0) < 0.02


def test_uniform_moments_and_range():
    draws = sample_noise(SeedKey(321), 100_000, 1).values
    assert np.all((draws > 0.0) & (draws < 1.0))
    assert abs(draws.mean() - 0.5) < 0.005


def test_invalid_shapes_rejected():
    with pytest.raises(ValueError):
        sample_noise(SeedKey(1), 0, 3)
    with pytest.raises(ValueError):
        sample_noise(SeedKey(1), 3, 0)
    with pytest.raises(ValueError):
        sample_noise(SeedKey(1), 3, 3, "lognormal")


def test_invalid_keys_rejected():
    with pytest.raises(ValueError):
        SeedKey(-1)
    with pytest.raises(ValueError):
        SeedKey(2**64)
    with pytest.raises(ValueError):
        SeedKey(0, (-1,))
    with pytest.raises(ValueError):
        SeedKey(0).child(-2)


def test_columns_pairwise_uncorrelated():
    block = sample_noise(SeedKey(77), 20_000, 4, "std_normal").values
    corr = np.corrcoef(block.T)
    off_diag = corr[~np.eye(4, dtype=bool)]
    assert np.max(np.abs(off_diag)) < 0.05


def test_noise_block_validation():
    with pytest.raises(ValueError):
        NoiseBlock(np.zeros((2, 2)), "weird")
    block = sample_noise(SeedKey(2), 4, 3)
    with pytest.raises(ValueError):
        block.prefix(0)
    with pytest.raises(ValueError):
        block.prefix(4)
