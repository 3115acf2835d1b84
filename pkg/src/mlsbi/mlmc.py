"""Monte Carlo and multilevel Monte Carlo estimates of the training loss.

The multilevel estimator keeps the per-level loss components and their
gradients separate: the coarse term is the mean loss over the level-0 batch,
and each correction term is the mean difference of losses between a level and
the one below it, evaluated on coupled (identical theta and noise) simulator
outputs.  The per-component gradients are first-class outputs because the
gradient adjustment of the optimiser rescales them individually.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdn import EstimatorParams, MixtureDensityNetwork
from .simulators import summarize

__all__ = ["CoupledLevelSample", "LevelBatch", "Task", "LossReport", "mc_loss", "mlmc_loss", "level_variance"]


@dataclass
class CoupledLevelSample:
    """One (theta, noise) draw pushed through consecutive-level generators."""

    theta: np.ndarray
    x_hi: np.ndarray
    x_lo: np.ndarray | None = None


@dataclass
class LevelBatch:
    """Stacked coupled samples for one level of the telescoping sum.

    ``thetas`` has shape (n, d_theta) and ``x_hi``/``x_lo`` shape
    (n, m, d_x); ``x_lo`` is absent at level 0 and must be produced from the
    identical (theta, noise) pairs as ``x_hi`` at levels >= 1.
    """

    level: int
    thetas: np.ndarray
    x_hi: np.ndarray
    x_lo: np.ndarray | None = None

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))
        self.x_hi = np.asarray(self.x_hi, dtype=np.float64)
        if self.x_hi.ndim == 2:
            self.x_hi = self.x_hi[:, :, None]
        if self.x_lo is not None:
            self.x_lo = np.asarray(self.x_lo, dtype=np.float64)
            if self.x_lo.ndim == 2:
                self.x_lo = self.x_lo[:, :, None]
            if self.x_lo.shape != self.x_hi.shape:
                raise ValueError("coupled outputs must have identical shapes")
        if self.thetas.shape[0] != self.x_hi.shape[0]:
            raise ValueError("thetas and x_hi must agree on the sample axis")

    @property
    def n(self) -> int:
        return self.thetas.shape[0]

    def sample(self, i: int) -> CoupledLevelSample:
        lo = None if self.x_lo is None else self.x_lo[i]
        return CoupledLevelSample(self.thetas[i], self.x_hi[i], lo)


@dataclass(frozen=True)
class Task:
    """What the estimator conditions on and what it scores.

    ``nle`` scores simulator output given parameters (one observation per
    draw); ``npe`` scores parameters given a summary of the simulated dataset.
    """

    kind: str
    summary_scheme: str = "identity"

    def __post_init__(self):
        if self.kind not in ("nle", "npe"):
            raise ValueError(f"unknown task kind {self.kind!r}")

    def pairs(self, thetas: np.ndarray, x: np.ndarray) -> tuple:
        """(conditions, targets) for one batch side."""
        if self.kind == "nle":
            if x.shape[1] != 1:
                raise ValueError("nle expects one observation per parameter draw")
            return thetas, x[:, 0, :]
        return summarize(x, self.summary_scheme), thetas


@dataclass
class LossReport:
    """Loss decomposition: total = sum(h); h[l] = f_plus[l] + f_minus[l-1]."""

    total: float
    h: np.ndarray
    f_plus: np.ndarray
    f_minus: np.ndarray
    grad_total: np.ndarray
    grads_plus: list
    grads_minus: list

    @property
    def n_levels(self) -> int:
        return self.h.size

    def to_dict(self) -> dict:
        """JSON-friendly scalar view for the training log."""
        return {
            "total": float(self.total),
            "h": [float(v) for v in self.h],
            "f_plus": [float(v) for v in self.f_plus],
            "f_minus": [float(v) for v in self.f_minus],
            "grad_norm": float(np.linalg.norm(self.grad_total)),
        }


def _side_terms(mdn: MixtureDensityNetwork, phi: EstimatorParams, task: Task, thetas, x, masks=None):
    """Per-sample losses f = -log q and gradient of their mean."""
    conditions, targets = task.pairs(thetas, x)
    batch = mdn.logpdf_grad(phi, conditions, targets, masks=masks)
    return -batch.values, -batch.grad_phi


def mc_loss(mdn: MixtureDensityNetwork, phi: EstimatorParams, task: Task, batch: LevelBatch, masks=None) -> LossReport:
    """Plain Monte Carlo loss on a single (top-fidelity) batch."""
    if batch.n == 0:
        raise ValueError("empty batch")
    f, grad = _side_terms(mdn, phi, task, batch.thetas, batch.x_hi, masks)
    total = float(np.mean(f))
    return LossReport(
        total=total,
        h=np.array([total]),
        f_plus=np.array([total]),
        f_minus=np.zeros(0),
        grad_total=grad,
        grads_plus=[grad],
        grads_minus=[],
    )


def mlmc_loss(mdn: MixtureDensityNetwork, phi: EstimatorParams, task: Task, batches: list, masks=None) -> LossReport:
    """Multilevel loss over batches for levels 0..L with coupled outputs.

    Every batch contributes a positive component (its own level's loss) and,
    for levels >= 1, a negative component (minus the lower level's loss on the
    same draws).  Gradients are returned per component.  One set of dropout
    masks applies to every component so the coupled terms stay matched.
    """
    if not batches:
        raise ValueError("no level batches supplied")
    batches = sorted(batches, key=lambda b: b.level)
    levels = [b.level for b in batches]
    if levels != list(range(len(batches))):
        raise ValueError(f"batches must cover levels 0..L exactly, got {levels}")

    f_plus = np.zeros(len(batches))
    f_minus = np.zeros(len(batches) - 1)
    grads_plus: list = []
    grads_minus: list = []
    for batch in batches:
        if batch.n == 0:
            raise ValueError(f"empty batch at level {batch.level}")
        fp, gp = _side_terms(mdn, phi, task, batch.thetas, batch.x_hi, masks)
        f_plus[batch.level] = np.mean(fp)
        grads_plus.append(gp)
        if batch.level >= 1:
            if batch.x_lo is None:
                raise ValueError(f"level {batch.level} batch lacks the coupled lower-level output")
            fm, gm = _side_terms(mdn, phi, task, batch.thetas, batch.x_lo, masks)
            f_minus[batch.level - 1] = -np.mean(fm)
            grads_minus.append(-gm)

    h = f_plus.copy()
    h[1:] += f_minus
    grad_total = np.sum(grads_plus, axis=0)
    if grads_minus:
        grad_total = grad_total + np.sum(grads_minus, axis=0)
    return LossReport(
        total=float(np.sum(h)),
        h=h,
        f_plus=f_plus,
        f_minus=f_minus,
        grad_total=grad_total,
        grads_plus=grads_plus,
        grads_minus=grads_minus,
    )


def level_variance(mdn: MixtureDensityNetwork, phi: EstimatorParams, task: Task, pilot: LevelBatch) -> float:
    """Sample variance of the per-sample level terms from a pilot batch.

    At level 0 the terms are the losses themselves; at higher levels they are
    the coupled differences.  The variance of the level's mean estimate is
    this value divided by the batch size.
    """
    if pilot.n < 2:
        raise ValueError("pilot variance needs at least two samples")
    terms, _ = _side_terms(mdn, phi, task, pilot.thetas, pilot.x_hi)
    if pilot.level >= 1:
        if pilot.x_lo is None:
            raise ValueError("pilot batch above level 0 lacks the coupled lower-level output")
        lo_terms, _ = _side_terms(mdn, phi, task, pilot.thetas, pilot.x_lo)
        terms = terms - lo_terms
    return float(np.var(terms, ddof=1))
