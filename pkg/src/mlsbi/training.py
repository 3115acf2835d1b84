"""Full-batch Adam training with per-level gradient rescaling and surgery.

The multilevel loss contains pairs of components that estimate the same
expectation with opposite signs; late in training one side tends to dominate
and the updates destabilise.  Before each step the correction-term gradients
are rescaled so each negative component matches the norm of its positive
partner, and when the combined correction gradient opposes the coarse
gradient the two are projected onto each other's normal planes before
summing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdn import EstimatorParams, MixtureDensityNetwork
from .mlmc import LevelBatch, LossReport, Task, mc_loss, mlmc_loss
from .rng import SeedKey

__all__ = [
    "AdamState",
    "TrainConfig",
    "TrainingDivergedError",
    "adjust_gradients",
    "project_conflicting",
    "adam_step",
    "train",
]


class TrainingDivergedError(RuntimeError):
    """Raised when the loss or gradient stops being finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass
class AdamState:
    m1: np.ndarray
    m2: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, lr: float = 1e-4) -> "AdamState":
        return cls(m1=np.zeros(n_params), m2=np.zeros(n_params), lr=lr)


@dataclass
class TrainConfig:
    epochs: int
    seed: SeedKey
    adjust_gradients: bool = True
    weight_decay: float = 1e-5
    learning_rate: float = 1e-4

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("need at least one epoch")


def project_conflicting(g0: np.ndarray, gc: np.ndarray) -> tuple:
    """Project each gradient onto the other's normal plane (conflict branch)."""
    dot = float(g0 @ gc)
    g0_adj = g0 - dot / float(gc @ gc) * gc
    gc_adj = gc - dot / float(g0 @ g0) * g0
    return g0_adj, gc_adj


def adjust_gradients(g_h0: np.ndarray, g_plus: list, g_minus: list, eps: float = 1e-8) -> np.ndarray:
    """Rescale correction components, then reconcile coarse vs. correction.

    ``g_plus`` holds the gradients of the positive components for levels
    1..L and ``g_minus`` those of the negative components for levels 0..L-1.
    Each negative component is rescaled to the norm of its positive partner,
    the corrections are summed, and if the sum opposes the coarse gradient
    both are projected onto each other's normal planes.  Returns the combined
    update direction.
    """
    if len(g_plus) != len(g_minus):
        raise ValueError("need matching positive/negative correction components")
    g_h0 = np.asarray(g_h0, dtype=np.float64)
    for g in list(g_plus) + list(g_minus):
        if np.shape(g) != g_h0.shape:
            raise ValueError("all gradient vectors must have identical length")
    g_c = np.zeros_like(g_h0)
    for gp, gm in zip(g_plus, g_minus):
        scale = np.linalg.norm(gp) / (np.linalg.norm(gm) + eps)
        g_c += gp + scale * gm
    if float(g_h0 @ g_c) < 0.0:
        g_h0, g_c = project_conflicting(g_h0, g_c)
    return g_h0 + g_c


def adam_step(
    state: AdamState,
    phi: EstimatorParams,
    grad: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple:
    """One bias-corrected Adam update; decay is added to the gradient first."""
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergedError("non-finite gradient", state.step)
    g = grad + weight_decay * phi.values if weight_decay else grad
    step = state.step + 1
    m1 = state.beta1 * state.m1 + (1.0 - state.beta1) * g
    m2 = state.beta2 * state.m2 + (1.0 - state.beta2) * g * g
    m1_hat = m1 / (1.0 - state.beta1**step)
    m2_hat = m2 / (1.0 - state.beta2**step)
    values = phi.values - state.lr * m1_hat / (np.sqrt(m2_hat) + state.eps)
    new_state = AdamState(m1=m1, m2=m2, step=step, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_state, EstimatorParams(values, phi.layout)


def _epoch_record(epoch: int, report: LossReport, grad: np.ndarray) -> dict:
    record = report.to_dict()
    record["epoch"] = epoch
    record["update_norm"] = float(np.linalg.norm(grad))
    record["grad_h0_norm"] = float(np.linalg.norm(report.grads_plus[0]))
    if report.grads_minus:
        g_c = np.sum(report.grads_plus[1:], axis=0) + np.sum(report.grads_minus, axis=0)
        record["grad_correction_norm"] = float(np.linalg.norm(g_c))
    return record


def train(
    mdn: MixtureDensityNetwork,
    task: Task,
    batches: list,
    config: TrainConfig,
    init_phi: EstimatorParams | None = None,
) -> tuple:
    """Run full-batch epochs of Adam on the (multilevel) loss.

    With a single level-0 batch this is plain Adam on the Monte Carlo loss;
    with more levels and ``adjust_gradients`` set, every step recombines the
    per-component gradients as in the gradient-adjustment procedure.  Returns
    the final parameters and the per-epoch log.
    """
    if isinstance(batches, LevelBatch):
        batches = [batches]
    phi = init_phi.copy() if init_phi is not None else mdn.init_params(config.seed.child(0))
    state = AdamState.zeros(phi.size, lr=config.learning_rate)
    multilevel = len(batches) > 1
    mask_key = config.seed.child(1)
    log = []
    for epoch in range(config.epochs):
        masks = mdn.dropout_masks(mask_key.child(epoch))
        if multilevel:
            report = mlmc_loss(mdn, phi, task, batches, masks=masks)
        else:
            report = mc_loss(mdn, phi, task, batches[0], masks=masks)
        if not np.isfinite(report.total):
            raise TrainingDivergedError("loss is not finite", epoch)
        if multilevel and config.adjust_gradients:
            grad = adjust_gradients(report.grads_plus[0], report.grads_plus[1:], report.grads_minus)
        else:
            grad = report.grad_total
        log.append(_epoch_record(epoch, report, grad))
        state, phi = adam_step(state, phi, grad, weight_decay=config.weight_decay)
    return phi, log
