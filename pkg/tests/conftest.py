import numpy as np
import pytest

from mlsbi import MdnConfig, MixtureDensityNetwork, SeedKey


def make_forced_mdn(cond_dim=1, target_dim=1, n_components=1, mu=0.0, sigma=1.0, logits=None):
    """MDN whose head ignores the condition: fixed means, stds and weights."""
    cfg = MdnConfig(condition_dim=cond_dim, target_dim=target_dim, hidden_layers=(8,), n_components=n_components)
    mdn = MixtureDensityNetwork(cfg)
    phi = mdn.init_params(SeedKey(0))
    K, t = n_components, target_dim
    head_w = phi.tensor("head.W")
    head_b = phi.tensor("head.b")
    head_w[:] = 0.0
    head_b[:] = 0.0
    if logits is not None:
        head_b[:K] = np.asarray(logits, dtype=float)
    mu_arr = np.broadcast_to(np.asarray(mu, dtype=float), (K, t))
    head_b[K : K + K * t] = mu_arr.ravel()
    sigma_arr = np.broadcast_to(np.asarray(sigma, dtype=float), (K, t))
    head_b[K + K * t :] = np.log(np.expm1(sigma_arr.ravel() - cfg.sigma_floor))
    return mdn, phi


@pytest.fixture
def forced_standard_normal():
    return make_forced_mdn()
