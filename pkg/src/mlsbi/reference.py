"""Reference posteriors and posterior sampling for likelihood estimators.

A reference posterior is a posterior estimator trained by plain Monte Carlo
with a large top-fidelity sample; cheaper estimators are compared against it
by a sampled KL divergence.  Likelihood-based estimators get posterior draws
from an adaptive random-walk Metropolis sampler restricted to the prior box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .datasets import simulate_mc_batch
from .mdn import AffineMap, EstimatorParams, MdnConfig, MixtureDensityNetwork
from .mlmc import Task
from .rng import SeedKey, sample_noise
from .simulators import Simulator, UniformBoxPrior
from .training import TrainConfig, train

__all__ = ["reference_npe", "kld_to_reference", "nle_posterior_sample", "ChainDiagnostics"]


def reference_npe(
    simulator: Simulator,
    summary_scheme: str,
    n: int,
    key: SeedKey,
    m: int = 1,
    epochs: int = 500,
    config: MdnConfig | None = None,
    learning_rate: float = 1e-3,
) -> tuple:
    """Train a posterior estimator on a large top-fidelity Monte Carlo batch.

    Returns the fitted network and parameters; used as the comparison target
    for cheaper estimators.
    """
    task = Task("npe", summary_scheme)
    batch = simulate_mc_batch(simulator, key.child(0), n, simulator.ladder.top, m)
    conditions, targets = task.pairs(batch.thetas, batch.x_hi)
    if config is None:
        config = MdnConfig(condition_dim=conditions.shape[1], target_dim=targets.shape[1], hidden_layers=(50, 50), n_components=3)
    mdn = MixtureDensityNetwork(
        config,
        cond_map=AffineMap.from_data(conditions),
        target_map=AffineMap.from_data(targets),
    )
    train_config = TrainConfig(epochs=epochs, seed=key.child(1), adjust_gradients=False, learning_rate=learning_rate)
    phi, log = train(mdn, task, [batch], train_config)
    return mdn, phi, log


def kld_to_reference(target_logpdf, ref_logpdf, ref_sampler, n_draws: int, key: SeedKey) -> float:
    """Sampled KL(reference || target) at one observed dataset.

    Draws come from the reference posterior; returns ``inf`` when the target
    has zero density at any of them.
    """
    draws = ref_sampler(n_draws, key)
    lp_ref = np.asarray(ref_logpdf(draws), dtype=np.float64)
    lp_target = np.asarray(target_logpdf(draws), dtype=np.float64)
    if not np.all(np.isfinite(lp_target)):
        return float("inf")
    return float(np.mean(lp_ref - lp_target))


@dataclass
class ChainDiagnostics:
    acceptance_rates: np.ndarray
    step_scales: np.ndarray


def nle_posterior_sample(
    loglik,
    prior: UniformBoxPrior,
    n_chains: int,
    n_steps: int,
    key: SeedKey,
    burn_in: int | None = None,
    adapt_every: int = 50,
    target_acceptance: tuple = (0.2, 0.5),
    initial_scale: float = 0.1,
    return_diagnostics: bool = False,
):
    """Random-walk Metropolis within the prior box.

    ``loglik`` maps a (k, d) batch of parameters to their summed surrogate
    log-likelihoods; the chain targets ``loglik + log prior``.  Step sizes
    adapt per chain during burn-in until the acceptance rate falls inside
    ``target_acceptance`` and stay fixed afterwards.  Deterministic given the
    key.  Raises if any chain accepts nothing after adaptation.
    """
    if n_chains < 1 or n_steps < 2:
        raise ValueError("need at least one chain and two steps")
    burn_in = n_steps // 2 if burn_in is None else burn_in
    if not 0 < burn_in < n_steps:
        raise ValueError("burn-in must be inside (0, n_steps)")
    d = prior.dim
    width = prior.upper - prior.lower

    normals = ndtri(sample_noise(key.child(0), n_steps * n_chains, d, "uniform01").values).reshape(n_steps, n_chains, d)
    uniforms = sample_noise(key.child(1), n_steps, n_chains, "uniform01").values
    position = prior.sample(key.child(2), n_chains)

    def log_target(theta: np.ndarray) -> np.ndarray:
        inside = prior.contains(theta)
        out = np.full(theta.shape[0], -np.inf)
        if np.any(inside):
            vals = np.asarray(loglik(theta[inside]), dtype=np.float64)
            out[inside] = vals + prior.logpdf(theta[inside])
        return out

    lp = log_target(position)
    scales = np.full(n_chains, initial_scale)
    window_accepts = np.zeros(n_chains)
    post_accepts = np.zeros(n_chains)
    kept = []
    for step in range(n_steps):
        proposal = position + scales[:, None] * width[None, :] * normals[step]
        lp_prop = log_target(proposal)
        with np.errstate(invalid="ignore"):
            accept = np.log(uniforms[step]) < lp_prop - lp
        position = np.where(accept[:, None], proposal, position)
        lp = np.where(accept, lp_prop, lp)
        window_accepts += accept
        if step >= burn_in:
            post_accepts += accept
            kept.append(position.copy())
        elif (step + 1) % adapt_every == 0:
            rate = window_accepts / adapt_every
            scales = np.where(rate < target_acceptance[0], scales * 0.5, scales)
            scales = np.where(rate > target_acceptance[1], scales * 1.5, scales)
            window_accepts[:] = 0.0
    if np.any(post_accepts == 0):
        dead = np.nonzero(post_accepts == 0)[0].tolist()
        raise RuntimeError(f"chains {dead} accepted no proposal after adaptation")
    samples = np.concatenate(kept, axis=0)
    if return_diagnostics:
        diag = ChainDiagnostics(acceptance_rates=post_accepts / (n_steps - burn_in), step_scales=scales)
        return samples, diag
    return samples
