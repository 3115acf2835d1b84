"""Per-level sample size planning under a simulation budget.

Two planners ship: the closed form that minimises the variance upper bound
given generator-difference norms, and a pilot planner that replaces the norms
with estimated per-sample variances (the closed form needs quantities that
are rarely known in practice).  Costs follow the multilevel accounting: a
level-0 sample costs C_0 and a coupled sample at level l costs C_l + C_{l-1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["CostModel", "AllocationPlan", "InfeasibleBudgetError", "plan_theorem_allocation", "plan_pilot", "cost_of", "mc_size_for_budget"]


class InfeasibleBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    """Strictly increasing positive per-level unit costs C_0 < ... < C_L."""

    unit_costs: tuple

    def __post_init__(self):
        costs = tuple(float(c) for c in self.unit_costs)
        if not costs or any(c <= 0 for c in costs):
            raise ValueError("unit costs must be positive")
        if any(b <= a for a, b in zip(costs, costs[1:])):
            raise ValueError("unit costs must be strictly increasing")
        object.__setattr__(self, "unit_costs", costs)

    @property
    def n_levels(self) -> int:
        return len(self.unit_costs)

    def effective_costs(self) -> np.ndarray:
        """Cost of one sample per level: C_0, then C_l + C_{l-1} for l >= 1."""
        c = np.asarray(self.unit_costs)
        out = c.copy()
        out[1:] += c[:-1]
        return out


@dataclass
class AllocationPlan:
    """Integer per-level sample counts under a budget.

    ``n_real`` keeps the continuous optimum before integer flooring, which is
    what the closed form is compared against.
    """

    n: np.ndarray
    budget: float
    achieved_cost: float
    n_real: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=np.int64)
        self.n_real = np.asarray(self.n_real, dtype=np.float64)
        if np.any(self.n < 1):
            raise ValueError("every level needs at least one sample")
        if self.achieved_cost > self.budget + 1e-9:
            raise ValueError("plan exceeds its budget")

    def to_dict(self) -> dict:
        return {
            "n": [int(v) for v in self.n],
            "budget": float(self.budget),
            "achieved_cost": float(self.achieved_cost),
            "n_real": [float(v) for v in self.n_real],
        }


def cost_of(n, costs: CostModel) -> float:
    """Exact simulation cost n_0 C_0 + sum_l n_l (C_l + C_{l-1})."""
    n = np.asarray(n, dtype=np.float64)
    if n.size != costs.n_levels:
        raise ValueError("plan and cost model disagree on the number of levels")
    return float(n @ costs.effective_costs())


def mc_size_for_budget(budget: float, unit_cost: float) -> int:
    """Largest single-level sample count affordable at the given unit cost."""
    return int(np.floor(budget / unit_cost))


def _finalize(weights: np.ndarray, costs: CostModel, budget: float) -> AllocationPlan:
    eff = costs.effective_costs()
    min_cost = float(eff.sum())
    if budget < min_cost:
        raise InfeasibleBudgetError(
            f"budget {budget} cannot afford one sample per level (needs {min_cost})"
        )
    denom = float(weights @ eff)
    if denom <= 0:  # all-zero weights: spread the floor allocation only
        n_real = np.ones_like(weights)
    else:
        n_real = weights * (budget / denom)
    n = np.maximum(1, np.floor(n_real).astype(np.int64))
    achieved = float(n @ eff)
    # flooring to >= 1 can overshoot a tight budget: trim expensive levels first
    order = np.argsort(eff)[::-1]
    while achieved > budget:
        for idx in order:
            if n[idx] > 1:
                n[idx] -= 1
                achieved -= eff[idx]
                break
        else:
            raise InfeasibleBudgetError(f"budget {budget} infeasible after flooring")
        if achieved <= budget:
            break
    # greedily spend leftover budget on the cheapest affordable level
    cheapest = int(np.argmin(eff))
    leftover = budget - achieved
    if eff[cheapest] <= leftover:
        extra = int(np.floor(leftover / eff[cheapest]))
        n[cheapest] += extra
        achieved += extra * eff[cheapest]
    return AllocationPlan(n=n, budget=float(budget), achieved_cost=achieved, n_real=n_real)


def plan_theorem_allocation(
    costs: CostModel,
    norms,
    budget: float,
    cost_kernel: str = "prev",
) -> AllocationPlan:
    """Closed-form variance-optimal allocation from generator norms.

    ``norms[0]`` is the W^{1,4} norm proxy of the coarse generator and
    ``norms[l]`` (l >= 1) that of the difference between levels l and l-1.
    The weight denominators use C_l + C_{l-1} by default, consistent with the
    cost functional; ``cost_kernel="next"`` reproduces the printed variant
    C_l + C_{l+1} (clamped at the top level, where no higher cost exists).
    """
    norms = np.asarray(norms, dtype=np.float64)
    if norms.size != costs.n_levels:
        raise ValueError("need one norm per level")
    if np.any(norms < 0):
        raise ValueError("norms must be non-negative")
    if cost_kernel not in ("prev", "next"):
        raise ValueError("cost_kernel must be 'prev' or 'next'")
    c = np.asarray(costs.unit_costs)
    denom = costs.effective_costs().copy()
    if cost_kernel == "next" and costs.n_levels > 1:
        denom[1:-1] = c[1:-1] + c[2:]
    weights = np.empty_like(norms)
    weights[0] = np.sqrt((norms[0] ** 4 + 1.0) / denom[0])
    if norms.size > 1:
        weights[1:] = np.sqrt((norms[1:] ** 2 + 1.0) / denom[1:])
    return _finalize(weights, costs, budget)


def plan_pilot(costs: CostModel, pilot_variances, budget: float) -> AllocationPlan:
    """Practical allocation n_l proportional to sqrt(V_l / effective cost)."""
    variances = np.asarray(pilot_variances, dtype=np.float64)
    if variances.size != costs.n_levels:
        raise ValueError("need one pilot variance per level")
    if np.any(variances < 0):
        raise ValueError("variances must be non-negative")
    weights = np.sqrt(variances / costs.effective_costs())
    return _finalize(weights, costs, budget)
