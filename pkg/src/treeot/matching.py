"""Dynamic matching equilibria.

A principal population (utility u per task path, cost c^0 = -u) and N
agent populations (costs c^i) must agree on a task distribution over a
finite task tree.  Types are private, so contracts are wage functions of
the realised task path only.  An equilibrium is a wage vector per
population, a task distribution nu and causal plans pi^i such that

* clearing: the wages sum to zero on every task path, and
* optimality: each plan attains the population's best-response value
  V^i(w^i) = inf { E_pi[c^i - w^i] : pi causal from X^i, task marginal free }.

Equilibria are constructed from the causal barycenter over all N+1
populations: the primal gives nu and the plans, the dual task
potentials give the wages, and complementary slackness makes each plan
a best response.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .barycenters import (
    SeparableCost,
    _as_path_cost,
    _causality_entries,
    _cost_matrix,
    _mart_value,
    causal_barycenter,
    causal_violation,
)
from .errors import BudgetExceededError, ValidationError
from .lp import LpProblem, TransportPlan, _solve_optimal, plan_from_dense
from .multicausal import TUPLE_BUDGET
from .trees import DiscreteDistribution, ScenarioTree

OPTIMALITY_TOL = 1e-7   # absorbs two LP solves being compared
MARGINAL_TOL = 1e-9


class _NegatedCost:
    """c^0 = -u wrapper around a principal utility."""

    def __init__(self, utility):
        self._u = _as_path_cost(utility)

    def __call__(self, xpath, ypath):
        return -self._u(xpath, ypath)


@dataclass(frozen=True)
class MatchingInstance:
    """Principal + agent populations with a shared finite task tree."""

    principal: ScenarioTree
    utility: object                      # u(x^0, y); SeparableCost or callable
    agents: tuple[ScenarioTree, ...]
    agent_costs: tuple
    tasks: ScenarioTree

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "agent_costs", tuple(self.agent_costs))
        if len(self.agents) != len(self.agent_costs):
            raise ValidationError("one cost per agent population required")
        horizon = self.principal.horizon
        for tree in (*self.agents, self.tasks):
            if tree.horizon != horizon:
                raise ValidationError("all populations and tasks must share the horizon")
        _as_path_cost(self.utility)
        for c in self.agent_costs:
            _as_path_cost(c)

    @property
    def populations(self) -> tuple[ScenarioTree, ...]:
        return (self.principal, *self.agents)

    @property
    def costs(self) -> tuple:
        """Population costs c^0 = -u, c^1, ..., c^N."""
        return (_NegatedCost(self.utility), *self.agent_costs)


@dataclass(frozen=True)
class Equilibrium:
    """Wages, task distribution and causal plans, one per population.

    ``wages[0]`` is the principal's; by construction it equals the
    negated sum of the agent wages, so clearing holds exactly.
    ``values[i]`` is E_pi[c^i - w^i] under the equilibrium plan.
    ``potentials[i]`` lives on the time-1 nodes of population i (the
    static part of the dual bundle certifying best-response optimality).
    """

    instance: MatchingInstance
    nu: DiscreteDistribution
    wages: tuple[np.ndarray, ...]
    plans: tuple[TransportPlan, ...]
    values: tuple[float, ...]
    potentials: tuple[np.ndarray, ...]
    mart_coefficients: tuple[dict, ...]

    def wage_table(self) -> dict[str, list[float]]:
        """Wages keyed by the task-path id sequence, listed per population 0..N."""
        tasks = self.instance.tasks
        return {
            "/".join(tasks.path_of(tasks.horizon, j).ids): [float(w[j]) for w in self.wages]
            for j in range(tasks.n_leaves)
        }


def _plan_expectation(tree, tasks, plan: TransportPlan, cost, wage=None) -> float:
    cmat = _cost_matrix(tree, tasks, cost)
    total = 0.0
    for (lx, ly), w in zip(plan.atoms, plan.weights):
        total += w * (cmat[lx, ly] - (0.0 if wage is None else float(wage[ly])))
    return float(total)


def solve_matching(
    instance: MatchingInstance, tuple_budget: int = TUPLE_BUDGET
) -> Equilibrium:
    """Construct an equilibrium from the joint causal barycenter.

    Wages are the negated dual task potentials (w^i = -g^i), normalised
    so the principal's wage clears the market exactly; plans and nu come
    from the barycenter primal.
    """
    populations = instance.populations
    solution = causal_barycenter(
        populations,
        instance.tasks,
        instance.costs,
        clear_index=0,
        tuple_budget=tuple_budget,
    )
    agent_wages = [-g for g in solution.task_potentials[1:]]
    principal_wage = (
        -reduce(np.add, agent_wages) if agent_wages else np.zeros(instance.tasks.n_leaves)
    )
    wages = (principal_wage, *agent_wages)
    values = tuple(
        _plan_expectation(tree, instance.tasks, plan, cost, wage)
        for tree, plan, cost, wage in zip(
            populations, solution.plans, instance.costs, wages
        )
    )
    return Equilibrium(
        instance=instance,
        nu=solution.nu,
        wages=wages,
        plans=solution.plans,
        values=values,
        potentials=solution.potentials,
        mart_coefficients=solution.mart_coefficients,
    )


def best_response(
    instance: MatchingInstance,
    i: int,
    wage: np.ndarray,
    tuple_budget: int = TUPLE_BUDGET,
) -> tuple[float, TransportPlan]:
    """V^i(w^i): cheapest causal plan against a wage, task marginal free.

    ``i`` indexes populations with 0 the principal.  The LP fixes the
    process marginal and the causality equalities only; the plan may
    induce any task distribution on the support.
    """
    populations = instance.populations
    if not 0 <= i < len(populations):
        raise ValidationError(f"population index {i} out of range")
    tree, tasks = populations[i], instance.tasks
    wage = np.asarray(wage, dtype=float)
    if wage.shape != (tasks.n_leaves,):
        raise ValidationError(
            f"wage vector must have one entry per task leaf ({tasks.n_leaves})"
        )
    if not np.all(np.isfinite(wage)):
        raise ValidationError("wage must be finite on the task support")
    n_x, n_y = tree.n_leaves, tasks.n_leaves
    if n_x * n_y > tuple_budget:
        raise BudgetExceededError("best_response: LP exceeds the tuple budget")

    cmat = _cost_matrix(tree, tasks, instance.costs[i]) - wage[None, :]
    shift = float(cmat.min())

    rows, cols, vals = [], [], []
    caus_rows: dict = {}

    def caus_row(key):
        if key not in caus_rows:
            caus_rows[key] = n_x + len(caus_rows)
        return caus_rows[key]

    for (lx, ly), entries in _causality_entries(tree, tasks):
        col = lx * n_y + ly
        rows.append(lx); cols.append(col); vals.append(1.0)
        for key, coef in entries:
            rows.append(caus_row(key)); cols.append(col); vals.append(coef)

    a_eq = sp.csr_matrix(
        (vals, (rows, cols)), shape=(n_x + len(caus_rows), n_x * n_y)
    )
    b_eq = np.concatenate([tree.leaf_law(), np.zeros(len(caus_rows))])
    sol = _solve_optimal(
        LpProblem(c=(cmat - shift).ravel(), a_eq=a_eq, b_eq=b_eq), "best-response LP"
    )
    plan = plan_from_dense(sol.x, (n_x, n_y), marginals=(tree.leaf_law(),))
    return sol.value + shift, plan


@dataclass(frozen=True)
class EquilibriumReport:
    clearing_ok: bool
    worst_clearing: float
    clearing_witnesses: tuple[str, ...]
    optimality_gaps: tuple[float, ...]
    optimality_ok: bool
    common_marginal_ok: bool
    worst_marginal_tv: float
    worst_causality: float

    @property
    def passed(self) -> bool:
        return self.clearing_ok and self.optimality_ok and self.common_marginal_ok


def verify_equilibrium(
    instance: MatchingInstance,
    equilibrium: Equilibrium,
    optimality_tol: float = OPTIMALITY_TOL,
) -> EquilibriumReport:
    """Check clearing (exactly), per-population optimality and the common marginal.

    Clearing recomputes the agents' wage sum in the construction order,
    so an equilibrium built by :func:`solve_matching` clears to exactly
    zero in float arithmetic.
    """
    tasks = instance.tasks
    wages = [np.asarray(w, dtype=float) for w in equilibrium.wages]
    agent_sum = (
        reduce(np.add, wages[1:]) if len(wages) > 1 else np.zeros(tasks.n_leaves)
    )
    residual = wages[0] + agent_sum
    clearing_witnesses = tuple(
        tasks.leaf_ids()[j] for j in np.nonzero(residual != 0.0)[0]
    )
    worst_clearing = float(np.max(np.abs(residual))) if residual.size else 0.0

    nu_w = np.asarray(equilibrium.nu.weights, dtype=float)
    worst_tv = 0.0
    worst_causality = 0.0
    gaps = []
    for i, (tree, plan, cost, wage) in enumerate(
        zip(instance.populations, equilibrium.plans, instance.costs, wages)
    ):
        task_marginal = plan.pushforward(1)
        worst_tv = max(worst_tv, 0.5 * float(np.abs(task_marginal - nu_w).sum()))
        dense = np.zeros((tree.n_leaves, tasks.n_leaves))
        for idx, w in zip(plan.atoms, plan.weights):
            dense[idx] = w
        worst_causality = max(worst_causality, causal_violation(tree, tasks, dense))
        achieved = _plan_expectation(tree, tasks, plan, cost, wage)
        best, _ = best_response(instance, i, wage)
        gaps.append(achieved - best)

    return EquilibriumReport(
        clearing_ok=not clearing_witnesses,
        worst_clearing=worst_clearing,
        clearing_witnesses=clearing_witnesses,
        optimality_gaps=tuple(float(g) for g in gaps),
        optimality_ok=all(abs(g) <= optimality_tol for g in gaps),
        common_marginal_ok=worst_tv <= MARGINAL_TOL,
        worst_marginal_tv=float(worst_tv),
        worst_causality=float(worst_causality),
    )


def complementary_slackness(
    instance: MatchingInstance, equilibrium: Equilibrium
) -> tuple[float, float]:
    """(min slack everywhere, worst |slack| on plan supports).

    Slack of population i at a leaf pair is
    c^i - w^i + G^i - f^i; dual feasibility keeps it above -1e-8 and it
    vanishes on the support of the equilibrium plan.
    """
    tasks = instance.tasks
    min_slack, worst_support = np.inf, 0.0
    for i, (tree, plan, cost) in enumerate(
        zip(instance.populations, equilibrium.plans, instance.costs)
    ):
        cmat = _cost_matrix(tree, tasks, cost)
        dense = np.zeros(cmat.shape)
        for idx, w in zip(plan.atoms, plan.weights):
            dense[idx] = w
        for lx in range(cmat.shape[0]):
            root = tree.path_indices(tree.horizon, lx)[0]
            for ly in range(cmat.shape[1]):
                slack = (
                    cmat[lx, ly]
                    - equilibrium.wages[i][ly]
                    + _mart_value(tree, tasks, equilibrium.mart_coefficients[i], lx, ly)
                    - equilibrium.potentials[i][root]
                )
                min_slack = min(min_slack, slack)
                if dense[lx, ly] > 0:
                    worst_support = max(worst_support, abs(slack))
    return float(min_slack), float(worst_support)
