"""Barycenters of filtered processes.

Two distinct mechanisms live here:

* Bicausal barycenters.  For time-separable costs c^i(x, y) =
  sum_t c^i_t(x_t, y_t), minimising  sum_i AW_{c^i}(X^i, Y)  over
  processes Y is equivalent to a single multicausal problem with the
  aggregated cost  c(x^1, ..., x^N) = sum_t inf_y sum_i c^i_t(x^i_t, y).
  :func:`bc_barycenter` solves that problem by backward induction and
  reads the barycenter off the optimal coupling through a pointwise
  minimiser selector (closed form for quadratic costs, grid argmin
  otherwise).  The barycenter lives on the product node structure, so
  its filtration is the product of the input filtrations.

* Causal barycenters.  The one-directional problem admits no such
  reformulation (:func:`counterexample_demo` reproduces the gap), but on
  a finite task support it is one joint LP over a task distribution nu
  and causal plans pi^i sharing nu as second marginal.  The LP duals
  yield potentials f^i on the processes and g^i on the task paths with
  sum_i g^i = 0, plus martingale coefficients; together they certify the
  optimum.  Anticausal barycenters collapse to a classical fixed-support
  barycenter on path space and are solved that way.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import costs as costs_mod
from .errors import BudgetExceededError, SolverFailureError, ValidationError
from .lp import (
    LpProblem,
    TransportPlan,
    _solve_optimal,
    plan_from_dense,
    wasserstein_barycenter_fixed_support,
)
from .multicausal import (
    MARGINAL_TOL,
    TUPLE_BUDGET,
    KernelPolicy,
    McotResult,
    MulticausalCoupling,
    assemble_coupling,
    mc_dpp,
)
from .trees import DiscreteDistribution, ScenarioTree, quantize_gauss_hermite

DUALITY_TOL = 1e-8


# -- separable costs ----------------------------------------------------------


class SeparableCost:
    """Time-separable transport cost c(x, y) = sum_t c_t(x_t, y_t)."""

    def at(self, t: int, x: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def lower_bound(self, t: int) -> float:
        return 0.0

    def path_cost(self, xpath, ypath) -> float:
        return float(
            sum(self.at(t + 1, x, y) for t, (x, y) in enumerate(zip(xpath, ypath)))
        )


@dataclass(frozen=True)
class PowerCost(SeparableCost):
    """c_t(x, y) = weight * |x - y|_p^p."""

    weight: float = 1.0
    exponent: float = 2.0

    def __post_init__(self):
        if self.weight <= 0:
            raise ValidationError("cost weight must be positive")
        if self.exponent < 1:
            raise ValidationError("cost exponent must be >= 1")

    def at(self, t, x, y):
        d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        return self.weight * float(np.sum(d ** self.exponent))


class TableCost(SeparableCost):
    """Explicit per-time cost matrices over finite grids.

    ``tables[t]`` is (x_atoms, y_atoms, matrix); evaluation looks the
    arguments up in the declared grids (within 1e-9 per coordinate).
    """

    def __init__(self, tables: Sequence[tuple[Sequence, Sequence, np.ndarray]]):
        self._tables = []
        for x_atoms, y_atoms, mat in tables:
            mat = np.asarray(mat, dtype=float)
            if mat.shape != (len(x_atoms), len(y_atoms)):
                raise ValidationError(
                    f"cost matrix shape {mat.shape} != ({len(x_atoms)}, {len(y_atoms)})"
                )
            self._tables.append(
                (
                    [np.atleast_1d(np.asarray(a, dtype=float)) for a in x_atoms],
                    [np.atleast_1d(np.asarray(a, dtype=float)) for a in y_atoms],
                    mat,
                )
            )

    @staticmethod
    def _find(atoms, v) -> int:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        for k, a in enumerate(atoms):
            if a.shape == v.shape and np.max(np.abs(a - v)) <= 1e-9:
                return k
        raise ValidationError(f"value {v!r} not on the declared cost grid")

    def at(self, t, x, y):
        x_atoms, y_atoms, mat = self._tables[t - 1]
        return float(mat[self._find(x_atoms, x), self._find(y_atoms, y)])

    def lower_bound(self, t):
        return float(self._tables[t - 1][2].min())


def _as_path_cost(cost) -> Callable:
    if isinstance(cost, SeparableCost):
        return cost.path_cost
    if callable(cost):
        return cost
    raise ValidationError(f"cannot interpret {cost!r} as a transport cost")


# -- pointwise minimiser selectors -------------------------------------------


@dataclass(frozen=True)
class Phi0Selector:
    """Per-time map from an N-tuple of states to a barycenter state.

    ``eps`` bounds how far the selected point may sit above the true
    per-time infimum: 0 for the closed form, caller-declared for grids.
    """

    mode: str
    eps: float
    _select: Callable[[int, tuple[np.ndarray, ...]], np.ndarray]

    def select(self, t: int, xs: tuple[np.ndarray, ...]) -> np.ndarray:
        return self._select(t, xs)


def phi0_quadratic(weights: Sequence[float]) -> Phi0Selector:
    """Closed-form selector for quadratic costs  lambda_i * |x - y|_2^2.

    The stationary point of  sum_i lambda_i |x^i - y|^2  is the weighted
    mean  y = sum_i lambda_i x^i, which attains the per-time infimum
    exactly.
    """
    lam = np.asarray(weights, dtype=float)
    if lam.ndim != 1 or np.any(lam <= 0) or abs(float(lam.sum()) - 1.0) > 1e-9:
        raise ValidationError("weights must be positive and sum to 1")

    def select(_t, xs):
        return sum(w * np.asarray(x, dtype=float) for w, x in zip(lam, xs))

    return Phi0Selector(mode="quadratic", eps=0.0, _select=select)


def grid_selector(
    costs: Sequence[SeparableCost],
    grids: Sequence[Sequence],
    eps: float = 0.0,
) -> Phi0Selector:
    """Argmin selector over caller-supplied per-time grids.

    Ties break to the first grid point in file order.  ``eps`` is the
    declared slack of the grid against the continuum infimum.
    """
    if eps < 0:
        raise ValidationError("selector tolerance must be nonnegative")
    parsed = [
        [np.atleast_1d(np.asarray(g, dtype=float)) for g in grid] for grid in grids
    ]
    if any(not grid for grid in parsed):
        raise ValidationError("every per-time grid must be nonempty")

    def select(t, xs):
        grid = parsed[t - 1]
        best, best_val = 0, np.inf
        for k, y in enumerate(grid):
            val = sum(c.at(t, x, y) for c, x in zip(costs, xs))
            if val < best_val - 0.0:
                best, best_val = k, val
        return grid[best]

    return Phi0Selector(mode="grid", eps=float(eps), _select=select)


def aggregate_cost(
    costs: Sequence[SeparableCost], selector: Phi0Selector
) -> costs_mod.PathCost:
    """Aggregated multicausal cost  sum_t sum_i c^i_t(x^i_t, phi_t(...)).

    By the selector contract this sits within T*eps of
    sum_t inf_y sum_i c^i_t.
    """
    costs = list(costs)

    def agg(*paths):
        horizon = len(paths[0])
        total = 0.0
        for t in range(1, horizon + 1):
            xs = tuple(p[t - 1] for p in paths)
            y = selector.select(t, xs)
            total += sum(c.at(t, x, y) for c, x in zip(costs, xs))
        return total

    return costs_mod.value_cost(agg)


# -- bicausal barycenters ------------------------------------------------------


@dataclass(frozen=True)
class BarycenterProcess:
    """Barycenter on the product node structure of the inputs."""

    tree: ScenarioTree
    components: dict[str, tuple[str, ...]]  # node id -> member node ids


@dataclass(frozen=True)
class BcBarycenterResult:
    value: float
    process: BarycenterProcess
    coupling: MulticausalCoupling
    mcot: McotResult


def bc_barycenter(
    trees: Sequence[ScenarioTree],
    costs: Sequence[SeparableCost],
    selector: Phi0Selector,
    tuple_budget: int = TUPLE_BUDGET,
) -> BcBarycenterResult:
    """Bicausal barycenter via the multicausal reformulation.

    The returned value is the multicausal optimum of the aggregated
    cost, which equals the barycenter value; the returned process
    carries the selector values on the support of the optimal coupling.
    """
    trees = tuple(trees)
    if len(trees) != len(costs):
        raise ValidationError("one cost per process required")
    res = mc_dpp(trees, aggregate_cost(costs, selector), tuple_budget=tuple_budget)
    coupling = assemble_coupling(res.policy)
    process = _product_process(trees, res.policy, selector)
    return BcBarycenterResult(
        value=res.value, process=process, coupling=coupling, mcot=res
    )


def _product_process(
    trees: Sequence[ScenarioTree], policy: KernelPolicy, selector: Phi0Selector
) -> BarycenterProcess:
    horizon = trees[0].horizon
    levels: list[list[dict]] = [[] for _ in range(horizon)]
    components: dict[str, tuple[str, ...]] = {}
    names: dict[tuple[int, tuple[int, ...]], str] = {}
    used: set[str] = set()

    def name_for(t, idx):
        member_ids = tuple(tr.node(t, k).node_id for tr, k in zip(trees, idx))
        base = "|".join(member_ids)
        name, k = base, 1
        while name in used:
            name = f"{base}#{k}"
            k += 1
        used.add(name)
        names[(t, idx)] = name
        components[name] = member_ids
        return name

    def visit(t, idx, parent_name):
        plan = policy.plans[(t, idx)]
        for child, w in plan.global_atoms():
            if w <= 0.0:
                continue
            name = name_for(t + 1, child)
            xs = tuple(tr.node(t + 1, k).value for tr, k in zip(trees, child))
            levels[t].append(
                {
                    "id": name,
                    "parent": parent_name,
                    "p": w,
                    "x": list(np.atleast_1d(selector.select(t + 1, xs))),
                }
            )
            if t + 1 < horizon:
                visit(t + 1, child, name)

    visit(0, (), None)
    tree = ScenarioTree.from_levels(levels)
    return BarycenterProcess(tree=tree, components=components)


def bc_bary_value(
    trees: Sequence[ScenarioTree],
    costs: Sequence[SeparableCost],
    candidate: ScenarioTree,
    tuple_budget: int = TUPLE_BUDGET,
) -> float:
    """sum_i AW_{c^i}(X^i, candidate), one bicausal solve per process."""
    total = 0.0
    for tree, cost in zip(trees, costs):
        fn = _as_path_cost(cost)
        total += mc_dpp(
            [tree, candidate], costs_mod.value_cost(fn), tuple_budget=tuple_budget
        ).value
    return float(total)


# -- causality-constrained transport LPs ---------------------------------------


def _cost_matrix(tree_x: ScenarioTree, tree_y: ScenarioTree, cost) -> np.ndarray:
    fn = _as_path_cost(cost)
    xs = tree_x.all_leaf_values()
    ys = tree_y.all_leaf_values()
    out = np.empty((len(xs), len(ys)))
    for a, xp in enumerate(xs):
        for b, yp in enumerate(ys):
            out[a, b] = fn(xp, yp)
    if not np.all(np.isfinite(out)):
        raise ValidationError("cost is not finite on every leaf pair")
    return out


def _causality_entries(tree_x: ScenarioTree, tree_y: ScenarioTree):
    """Rows enforcing: law of x's next step given (x past, y past) is the x kernel.

    Yields, per leaf pair (lx, ly), the +1 row key and the (-p_b, row
    key) fan; keys are (t, x child index at t+1, y node index at t).
    """
    anc_x = [tree_x.path_indices(tree_x.horizon, j) for j in range(tree_x.n_leaves)]
    anc_y = [tree_y.path_indices(tree_y.horizon, j) for j in range(tree_y.n_leaves)]
    horizon = tree_x.horizon
    for lx in range(tree_x.n_leaves):
        for ly in range(tree_y.n_leaves):
            entries = []
            for t in range(1, horizon):
                b_y = anc_y[ly][t - 1]
                entries.append(((t, anc_x[lx][t], b_y), 1.0))
                for b in tree_x.children(t, anc_x[lx][t - 1]):
                    entries.append(((t, b, b_y), -tree_x.node(t + 1, b).prob))
            yield (lx, ly), entries


def causal_violation(
    tree_x: ScenarioTree, tree_y: ScenarioTree, matrix: np.ndarray
) -> float:
    """Worst violation of the causal test functions by a plan matrix."""
    worst = 0.0
    sums: dict[tuple[int, int, int], float] = {}
    for (lx, ly), entries in _causality_entries(tree_x, tree_y):
        w = float(matrix[lx, ly])
        if w == 0.0:
            continue
        for key, coef in entries:
            sums[key] = sums.get(key, 0.0) + coef * w
    if sums:
        worst = max(abs(v) for v in sums.values())
    return worst


def causal_ot(
    tree_x: ScenarioTree,
    tree_y: ScenarioTree,
    cost,
    tuple_budget: int = TUPLE_BUDGET,
) -> tuple[float, TransportPlan]:
    """Optimal transport over causal couplings from ``tree_x`` to ``tree_y``.

    The LP carries both marginal blocks plus the one-directional
    causality equalities; its value never exceeds the bicausal value on
    the same instance.
    """
    if tree_x.horizon != tree_y.horizon:
        raise ValidationError("horizon mismatch")
    n_x, n_y = tree_x.n_leaves, tree_y.n_leaves
    if n_x * n_y > tuple_budget:
        raise BudgetExceededError(
            f"causal_ot: {n_x * n_y} leaf pairs exceed budget {tuple_budget}"
        )
    cmat = _cost_matrix(tree_x, tree_y, cost)
    shift = float(cmat.min())

    rows, cols, vals = [], [], []
    caus_rows: dict[tuple[int, int, int], int] = {}

    def caus_row(key):
        if key not in caus_rows:
            caus_rows[key] = n_x + n_y + len(caus_rows)
        return caus_rows[key]

    for (lx, ly), entries in _causality_entries(tree_x, tree_y):
        col = lx * n_y + ly
        rows.append(lx); cols.append(col); vals.append(1.0)
        rows.append(n_x + ly); cols.append(col); vals.append(1.0)
        for key, coef in entries:
            rows.append(caus_row(key)); cols.append(col); vals.append(coef)

    n_rows = n_x + n_y + len(caus_rows)
    a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_x * n_y))
    b_eq = np.concatenate([tree_x.leaf_law(), tree_y.leaf_law(), np.zeros(len(caus_rows))])
    sol = _solve_optimal(
        LpProblem(c=(cmat - shift).ravel(), a_eq=a_eq, b_eq=b_eq), "causal transport LP"
    )
    plan = plan_from_dense(
        sol.x, (n_x, n_y), marginals=(tree_x.leaf_law(), tree_y.leaf_law())
    )
    return sol.value + shift, plan


def _mart_value(tree_x, tree_y, coeffs: dict, lx: int, ly: int) -> float:
    """Martingale test-function value G(lx, ly) from causality duals."""
    path_x = tree_x.path_indices(tree_x.horizon, lx)
    path_y = tree_y.path_indices(tree_y.horizon, ly)
    total = 0.0
    for t in range(1, tree_x.horizon):
        y_id = tree_y.node(t, path_y[t - 1]).node_id
        total += coeffs.get((t, tree_x.node(t + 1, path_x[t]).node_id, y_id), 0.0)
        for b in tree_x.children(t, path_x[t - 1]):
            coef = coeffs.get((t, tree_x.node(t + 1, b).node_id, y_id), 0.0)
            total -= tree_x.node(t + 1, b).prob * coef
    return total


# -- causal barycenters ---------------------------------------------------------


@dataclass(frozen=True)
class CausalBarycenterSolution:
    """Primal and dual bundle of the causal barycenter LP.

    Dual conventions: ``potentials[i]`` lives on the time-1 nodes of
    process i (static potentials carry only initial information; the
    path-dependent part of the LP duals is folded into the martingale
    coefficients) and satisfies, entrywise on leaf pairs,

        f^i(x_1) - g^i(y) <= c^i(x, y) + G^i(x, y),

    with sum_i g^i = 0 exactly on the task support; G^i is induced by
    ``mart_coefficients[i]`` through the causal test functions.  Setting
    w^i = -g^i recovers wage-style potentials with f^i <= c^i - w^i + G^i.
    """

    value: float
    task_tree: ScenarioTree
    trees: tuple[ScenarioTree, ...]
    nu: DiscreteDistribution
    plans: tuple[TransportPlan, ...]
    potentials: tuple[np.ndarray, ...]
    task_potentials: tuple[np.ndarray, ...]
    mart_coefficients: tuple[dict[tuple[int, str, str], float], ...]

    def dual_value(self) -> float:
        return float(
            sum(
                f @ np.array([n.prob for n in t.levels[0]])
                for f, t in zip(self.potentials, self.trees)
            )
        )

    def task_potential_sum(self) -> np.ndarray:
        total = self.task_potentials[0].copy()
        for g in self.task_potentials[1:]:
            total = total + g
        return total

    def support_slack(self, costs) -> tuple[float, float]:
        """(min slack everywhere, max |slack| on the plan supports)."""
        min_slack, worst_support = np.inf, 0.0
        for i, (tree, plan, cost) in enumerate(zip(self.trees, self.plans, costs)):
            cmat = _cost_matrix(tree, self.task_tree, cost)
            dense = np.zeros(cmat.shape)
            for idx, w in zip(plan.atoms, plan.weights):
                dense[idx] = w
            for lx in range(cmat.shape[0]):
                root = tree.path_indices(tree.horizon, lx)[0]
                for ly in range(cmat.shape[1]):
                    slack = (
                        cmat[lx, ly]
                        + _mart_value(tree, self.task_tree, self.mart_coefficients[i], lx, ly)
                        - self.potentials[i][root]
                        + self.task_potentials[i][ly]
                    )
                    min_slack = min(min_slack, slack)
                    if dense[lx, ly] > 0:
                        worst_support = max(worst_support, abs(slack))
        return float(min_slack), float(worst_support)


def causal_barycenter(
    trees: Sequence[ScenarioTree],
    task_tree: ScenarioTree,
    costs,
    clear_index: int = 0,
    tuple_budget: int = TUPLE_BUDGET,
) -> CausalBarycenterSolution:
    """Causal barycenter over distributions on a finite task tree.

    One joint LP in (nu, pi^1, ..., pi^N): process marginals are fixed,
    every plan's task marginal equals nu, and each plan satisfies the
    causality equalities of its own process.  Probabilities stored on
    ``task_tree`` are ignored; only its support structure matters.
    ``clear_index`` names the population whose task potential absorbs
    the zero-sum normalisation.
    """
    trees = tuple(trees)
    if not trees:
        raise ValidationError("at least one process required")
    if len(trees) != len(costs):
        raise ValidationError("one cost per process required")
    if any(t.horizon != task_tree.horizon for t in trees):
        raise ValidationError("horizon mismatch with the task tree")
    if not 0 <= clear_index < len(trees):
        raise ValidationError(f"clear_index {clear_index} out of range")
    n_y = task_tree.n_leaves
    sizes = [t.n_leaves for t in trees]
    if sum(n * n_y for n in sizes) > tuple_budget:
        raise BudgetExceededError("causal_barycenter: joint LP exceeds the tuple budget")

    cmats = [_cost_matrix(t, task_tree, c) for t, c in zip(trees, costs)]
    shift = min(float(c.min()) for c in cmats)

    offsets = np.cumsum([n_y] + [n * n_y for n in sizes])[:-1]
    n_vars = n_y + sum(n * n_y for n in sizes)
    rows, cols, vals, rhs = [], [], [], []
    row_count = 0

    def add(r, c, v):
        rows.append(r); cols.append(c); vals.append(v)

    xmarg_rows, link_rows, caus_row_maps = [], [], []
    for i, tree in enumerate(trees):
        xmarg_rows.append(row_count)
        row_count += sizes[i]
        rhs.extend(float(v) for v in tree.leaf_law())
        link_rows.append(row_count)
        row_count += n_y
        rhs.extend([0.0] * n_y)
        caus_row_maps.append({})

    def caus_row(i, key):
        nonlocal row_count
        table = caus_row_maps[i]
        if key not in table:
            table[key] = row_count
            row_count += 1
            rhs.append(0.0)
        return table[key]

    for i, tree in enumerate(trees):
        ofs = offsets[i]
        for (lx, ly), entries in _causality_entries(tree, task_tree):
            col = ofs + lx * n_y + ly
            add(xmarg_rows[i] + lx, col, 1.0)
            add(link_rows[i] + ly, col, 1.0)
            for key, coef in entries:
                add(caus_row(i, key), col, coef)
        for ly in range(n_y):
            add(link_rows[i] + ly, ly, -1.0)

    c_vec = np.zeros(n_vars)
    for i, cmat in enumerate(cmats):
        c_vec[offsets[i]:offsets[i] + sizes[i] * n_y] = (cmat - shift).ravel()
    a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(row_count, n_vars))
    sol = _solve_optimal(
        LpProblem(c=c_vec, a_eq=a_eq, b_eq=np.array(rhs)), "causal barycenter LP"
    )
    value = sol.value + len(trees) * shift

    nu_raw = np.where(sol.x[:n_y] > 0, sol.x[:n_y], 0.0)
    nu_raw = nu_raw / float(nu_raw.sum())
    nu = DiscreteDistribution(support=task_tree.leaf_ids(), weights=nu_raw)
    plans = tuple(
        plan_from_dense(
            sol.x[offsets[i]:offsets[i] + sizes[i] * n_y],
            (sizes[i], n_y),
            marginals=(trees[i].leaf_law(), nu_raw),
        )
        for i in range(len(trees))
    )

    leaf_potentials = [
        np.array(sol.duals[xmarg_rows[i]:xmarg_rows[i] + sizes[i]])
        for i in range(len(trees))
    ]
    links = [np.array(sol.duals[link_rows[i]:link_rows[i] + n_y]) for i in range(len(trees))]
    # zero-sum normalisation: dump the (nonnegative) excess on one population,
    # which keeps every dual row feasible and is exact in float arithmetic
    others_sum = None
    for i, h in enumerate(links):
        if i == clear_index:
            continue
        others_sum = h.copy() if others_sum is None else others_sum + h
    if others_sum is None:
        others_sum = np.zeros(n_y)
    links[clear_index] = -others_sum
    task_potentials = tuple(-h for h in links)

    # project leaf potentials onto time-1 information; the conditional
    # expectations E[f | F_t] become y-independent martingale increments
    # folded into G^i, which leaves every dual slack unchanged
    potentials = []
    mart_coefficients = []
    for i, tree in enumerate(trees):
        coeffs = {}
        for (t, b, b_y), row in caus_row_maps[i].items():
            coeffs[(t, tree.node(t + 1, b).node_id, task_tree.node(t, b_y).node_id)] = float(
                -sol.duals[row]
            )
        cond = [leaf_potentials[i]]
        for t in range(tree.horizon - 1, 0, -1):
            layer = np.array(
                [
                    sum(tree.node(t + 1, b).prob * cond[0][b] for b in tree.children(t, k))
                    for k in range(tree.level_size(t))
                ]
            )
            cond.insert(0, layer)
        for t in range(1, tree.horizon):
            for b in range(tree.level_size(t + 1)):
                b_id = tree.node(t + 1, b).node_id
                for b_y in range(task_tree.level_size(t)):
                    key = (t, b_id, task_tree.node(t, b_y).node_id)
                    coeffs[key] = coeffs.get(key, 0.0) - float(cond[t][b])
        potentials.append(cond[0] + shift)
        mart_coefficients.append(coeffs)

    solution = CausalBarycenterSolution(
        value=value,
        task_tree=task_tree,
        trees=trees,
        nu=nu,
        plans=plans,
        potentials=tuple(potentials),
        task_potentials=task_potentials,
        mart_coefficients=tuple(mart_coefficients),
    )
    if abs(solution.dual_value() - value) > DUALITY_TOL * (1 + abs(value)):
        raise SolverFailureError(
            "causal barycenter duality gap exceeds tolerance",
            details={"value": value, "dual_value": solution.dual_value()},
        )
    return solution


# -- anticausal barycenters ------------------------------------------------------


@dataclass(frozen=True)
class AnticausalBarycenterResult:
    """Classical path-space barycenter plus the gluing recipe.

    ``kernels[i]`` disintegrates the i-th optimal plan by the task path:
    task leaf id -> {process leaf id: conditional weight}.  The glued
    anticausal process draws a task path from ``nu`` and then each
    process independently from its kernel.  ``potentials`` are the LP
    duals of the measure blocks (their integrals sum to the value).
    """

    value: float
    nu: DiscreteDistribution
    plans: tuple[TransportPlan, ...]
    kernels: tuple[dict[str, dict[str, float]], ...]
    potentials: tuple[np.ndarray, ...]


def anticausal_barycenter(
    trees: Sequence[ScenarioTree],
    costs,
    task_tree: ScenarioTree,
    tuple_budget: int = TUPLE_BUDGET,
) -> AnticausalBarycenterResult:
    """Anticausal barycenter on a fixed task support.

    Causality from the task process towards the inputs relaxes to plain
    couplings on path space, so this is the classical fixed-support
    barycenter of the leaf-path laws.
    """
    trees = tuple(trees)
    if len(trees) != len(costs):
        raise ValidationError("one cost per process required")
    if any(t.horizon != task_tree.horizon for t in trees):
        raise ValidationError("horizon mismatch with the task tree")
    n_y = task_tree.n_leaves
    if sum(t.n_leaves * n_y for t in trees) > tuple_budget:
        raise BudgetExceededError("anticausal_barycenter: joint LP exceeds the tuple budget")
    n = len(trees)
    cost_mats = [
        _cost_matrix(tree, task_tree, c).T * n  # (support, measure) orientation
        for tree, c in zip(trees, costs)
    ]
    res = wasserstein_barycenter_fixed_support(
        measures=[t.leaf_law() for t in trees],
        weights=np.full(n, 1.0 / n),
        costs=cost_mats,
        support=task_tree.leaf_ids(),
    )
    kernels = []
    for i, plan in enumerate(res.plans):
        nu_w = res.barycenter.weights
        k: dict[str, dict[str, float]] = {}
        for (ky, jx), w in zip(plan.atoms, plan.weights):
            if w <= 0 or nu_w[ky] <= 0:
                continue
            y_id = task_tree.leaf_ids()[ky]
            x_id = trees[i].leaf_ids()[jx]
            k.setdefault(y_id, {})[x_id] = k.get(y_id, {}).get(x_id, 0.0) + w / nu_w[ky]
        kernels.append(k)
    return AnticausalBarycenterResult(
        value=res.value, nu=res.barycenter, plans=res.plans,
        kernels=tuple(kernels), potentials=res.potentials,
    )


# -- the quantised Gaussian counterexample ----------------------------------------


@dataclass(frozen=True)
class CounterexampleReport:
    n_quant: int
    moment2: float
    moment6: float
    cost_phi0_construction: float
    cost_canonical_candidate: float

    @property
    def gap(self) -> float:
        return self.cost_phi0_construction - self.cost_canonical_candidate


def cubic_pair(n_quant: int) -> tuple[ScenarioTree, ScenarioTree]:
    """The two-period pair X^1 = (Z, Z^3), X^2 = (0, Z^3), Z quantised N(0,1)."""
    q = quantize_gauss_hermite(n_quant)
    levels_1 = [
        [
            {"id": f"a1_{k}", "parent": None, "p": float(w), "x": [float(z)]}
            for k, (z, w) in enumerate(zip(q.support, q.weights))
        ],
        [
            {"id": f"a2_{k}", "parent": f"a1_{k}", "p": 1.0, "x": [float(z) ** 3]}
            for k, z in enumerate(q.support)
        ],
    ]
    levels_2 = [
        [{"id": "b1_0", "parent": None, "p": 1.0, "x": [0.0]}],
        [
            {"id": f"b2_{k}", "parent": "b1_0", "p": float(w), "x": [float(z) ** 3]}
            for k, (z, w) in enumerate(zip(q.support, q.weights))
        ],
    ]
    return ScenarioTree.from_levels(levels_1), ScenarioTree.from_levels(levels_2)


def counterexample_demo(n_quant: int) -> CounterexampleReport:
    """Why no pointwise-selector reformulation solves the causal problem.

    Builds the quantised pair above with costs c^1 = c^2 = |x - y|^2 / 2
    and reports:

    (a) the cost of the product-coupling selector construction with the
        doubled-weight map y = x^1 + x^2, which evaluates to
        (E Z^2 + 2 E Z^6) / 2 = 15.5;
    (b) the causal transport cost against the candidate (0, Z^3), the
        summed squared-norm causal values, which evaluates to E Z^2 = 1.

    Both are exact for n_quant >= 4 by moment matching up to order 7.
    """
    if n_quant < 4:
        raise ValidationError("n_quant must be >= 4 for order-7 moment exactness")
    q = quantize_gauss_hermite(n_quant)
    z = np.array(q.support)
    w = q.weights
    m2 = float(w @ z**2)
    m6 = float(w @ z**6)

    tree_1, tree_2 = cubic_pair(n_quant)

    # (a) product coupling, selector y_t = x^1_t + x^2_t, costs |.|^2 / 2
    cost_a = 0.0
    for k in range(n_quant):
        for l in range(n_quant):
            x1 = (z[k], z[k] ** 3)
            x2 = (0.0, z[l] ** 3)
            y = (x1[0] + x2[0], x1[1] + x2[1])
            cost_a += (
                w[k]
                * w[l]
                * 0.5
                * (
                    (x1[0] - y[0]) ** 2 + (x1[1] - y[1]) ** 2
                    + (x2[0] - y[0]) ** 2 + (x2[1] - y[1]) ** 2
                )
            )

    # (b) causal transport values with squared-norm cost against (0, Z^3)
    candidate = tree_2
    sq = PowerCost(weight=1.0, exponent=2.0)
    cost_b = 0.0
    for tree in (tree_1, tree_2):
        value, _ = causal_ot(tree, candidate, sq)
        cost_b += value

    return CounterexampleReport(
        n_quant=n_quant,
        moment2=m2,
        moment6=m6,
        cost_phi0_construction=float(cost_a),
        cost_canonical_candidate=float(cost_b),
    )
