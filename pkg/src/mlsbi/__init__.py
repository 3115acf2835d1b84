"""Multilevel Monte Carlo training of conditional density estimators for
simulation-based inference: seed-matched multi-fidelity simulators, a mixture
density network with exact gradients, the multilevel loss and its
gradient-adjusted optimiser, sample-allocation planning, and the evaluation
metrics used to compare estimators."""

from .allocation import AllocationPlan, CostModel, InfeasibleBudgetError, cost_of, mc_size_for_budget, plan_pilot, plan_theorem_allocation
from .datasets import load_dataset, save_dataset, simulate_level_batches, simulate_mc_batch
from .mdn import AffineMap, EstimatorParams, LogDensityBatch, MdnConfig, MixtureDensityNetwork, load_estimator, save_estimator
from .metrics import (
    CoverageCurve,
    EvalGrid,
    aggregate_nlpd,
    coverage,
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
from .mlmc import CoupledLevelSample, LevelBatch, LossReport, Task, level_variance, mc_loss, mlmc_loss
from .reference import kld_to_reference, nle_posterior_sample, reference_npe
from .rng import NoiseBlock, SeedKey, derive_stream, sample_noise
from .simulators import (
    FidelityLadder,
    GandKSimulator,
    GaussianPrior,
    LinearGaussianSimulator,
    OrnsteinUhlenbeckSimulator,
    Simulator,
    ToggleSwitchSimulator,
    UniformBoxPrior,
    erfinv_taylor,
    gk_exact_logpdf,
    gk_quantile,
    summarize,
    truncnorm_positive_ppf,
)
from .training import AdamState, TrainConfig, TrainingDivergedError, adam_step, adjust_gradients, project_conflicting, train

__version__ = "0.1.0"
