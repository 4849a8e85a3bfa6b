"""Exact LP engine and classical (multi)marginal transport solvers.

Everything downstream (dynamic programming, causality-constrained LPs,
barycenters, matching) reduces to equality-form linear programs

    min c.x   s.t.  A x = b,  x >= 0,

solved here through HiGHS dual simplex.  The solver contract is the
residual tolerances on returned solutions, not the algorithm:

* primal feasibility  ||Ax - b||_inf <= 1e-9,
* dual feasibility    min reduced cost >= -1e-9,
* complementary-slackness gap |c.x - b.y| <= 1e-8 * (1 + |c.x|).

Transport costs are normalised by subtracting their minimum before the
solve and restoring it afterwards.  This makes the returned plan exactly
invariant under constant cost shifts (identical LP input, deterministic
backend) and realises the value shift c -> c + kappa exactly.

Dual potentials of a transport problem are defined up to additive
constants summing to zero; they are pinned by zeroing each potential at
its first atom for marginal blocks 2..N and compensating in block 1.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import BudgetExceededError, SolverFailureError, ValidationError
from .trees import DiscreteDistribution

PRIMAL_TOL = 1e-9
DUAL_TOL = 1e-9
GAP_TOL = 1e-8
MARGINAL_TOL = 1e-9

#: refuse dense cost tensors above this entry count
DENSE_BUDGET = 10_000_000

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


class _Stats(threading.local):
    """Per-thread LP counters, surfaced in CLI reports."""

    def __init__(self):
        self.solves = 0
        self.iterations = 0

    def reset(self):
        self.solves = 0
        self.iterations = 0


stats = _Stats()


@dataclass
class LpProblem:
    """Equality-form LP: min c.x s.t. A x = b, x >= 0."""

    c: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b_eq = np.asarray(self.b_eq, dtype=float)
        self.a_eq = sp.csr_matrix(self.a_eq)
        if self.a_eq.shape != (self.b_eq.shape[0], self.c.shape[0]):
            raise ValidationError(
                f"constraint matrix shape {self.a_eq.shape} does not match "
                f"{self.b_eq.shape[0]} rhs entries and {self.c.shape[0]} variables"
            )
        if not np.all(np.isfinite(self.b_eq)):
            raise ValidationError("non-finite right-hand side")
        if not np.all(np.isfinite(self.c)):
            raise ValidationError("non-finite objective coefficients")


@dataclass(frozen=True)
class LpSolution:
    """Solution bundle with dual multipliers per constraint."""

    status: str                       # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    duals: np.ndarray | None
    value: float | None
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan
    iterations: int = 0


def solve_lp(problem: LpProblem, lexicographic: bool = False) -> LpSolution:
    """Solve an equality-form LP, returning primal values and duals.

    With ``lexicographic`` the optimal face is refined to the vertex that
    greedily maximises variables in index order (the lexicographically
    smallest optimal basis); intended for small, degenerate programs.
    """
    sol = _solve_raw(problem)
    if sol.status != "optimal" or not lexicographic:
        return sol
    x = _lexicographic_refine(problem, sol)
    return LpSolution(
        status="optimal",
        x=x,
        duals=sol.duals,
        value=float(problem.c @ x),
        primal_residual=_inf_norm(problem.a_eq @ x - problem.b_eq),
        dual_residual=sol.dual_residual,
        gap=sol.gap,
        iterations=sol.iterations,
    )


def _solve_raw(problem: LpProblem) -> LpSolution:
    res = linprog(
        c=problem.c,
        A_eq=problem.a_eq,
        b_eq=problem.b_eq,
        bounds=(0, None),
        method="highs-ds",
        options=dict(_HIGHS_OPTIONS),
    )
    stats.solves += 1
    stats.iterations += int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return LpSolution(status="infeasible", x=None, duals=None, value=None)
    if res.status == 3:
        return LpSolution(status="unbounded", x=None, duals=None, value=None)
    if res.status != 0:
        raise SolverFailureError(
            f"LP backend failed: {res.message}", details={"status": int(res.status)}
        )
    x = np.asarray(res.x, dtype=float)
    y = np.asarray(res.eqlin.marginals, dtype=float)
    value = float(problem.c @ x)
    primal = _inf_norm(problem.a_eq @ x - problem.b_eq)
    reduced = problem.c - problem.a_eq.T @ y
    dual = max(0.0, float(-(reduced.min()))) if reduced.size else 0.0
    gap = abs(value - float(problem.b_eq @ y))
    if primal > PRIMAL_TOL or dual > DUAL_TOL or gap > GAP_TOL * (1 + abs(value)):
        raise SolverFailureError(
            "LP solution violates residual tolerances",
            details={
                "primal_residual": primal,
                "dual_residual": dual,
                "gap": gap,
                "value": value,
            },
        )
    return LpSolution(
        status="optimal",
        x=x,
        duals=y,
        value=value,
        primal_residual=primal,
        dual_residual=dual,
        gap=gap,
        iterations=int(getattr(res, "nit", 0) or 0),
    )


def _lexicographic_refine(problem: LpProblem, sol: LpSolution) -> np.ndarray:
    n = problem.c.shape[0]
    rows = [problem.a_eq, sp.csr_matrix(problem.c.reshape(1, -1))]
    rhs = [problem.b_eq, np.array([sol.value])]
    x = np.array(sol.x)
    for k in range(n):
        a = sp.vstack(rows, format="csr")
        b = np.concatenate(rhs)
        obj = np.zeros(n)
        obj[k] = -1.0  # maximise x_k on the optimal face
        res = linprog(c=obj, A_eq=a, b_eq=b, bounds=(0, None), method="highs-ds",
                      options=dict(_HIGHS_OPTIONS))
        stats.solves += 1
        if res.status != 0:
            break  # keep the last consistent refinement
        x = np.asarray(res.x, dtype=float)
        pin = sp.csr_matrix(([1.0], ([0], [k])), shape=(1, n))
        rows.append(pin)
        rhs.append(np.array([x[k]]))
    return x


def _inf_norm(v) -> float:
    v = np.asarray(v)
    return float(np.max(np.abs(v))) if v.size else 0.0


def _solve_optimal(problem: LpProblem, what: str) -> LpSolution:
    sol = solve_lp(problem)
    if sol.status != "optimal":
        raise SolverFailureError(f"{what}: LP is {sol.status}")
    return sol


# -- transport plans -------------------------------------------------------


@dataclass(frozen=True)
class TransportPlan:
    """Sparse nonnegative measure on a product of finite supports."""

    shape: tuple[int, ...]
    atoms: tuple[tuple[int, ...], ...]
    weights: np.ndarray
    marginals: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if np.any(self.weights < 0):
            raise ValidationError("transport plan has a negative weight")

    def pushforward(self, axis: int) -> np.ndarray:
        out = np.zeros(self.shape[axis])
        for idx, w in zip(self.atoms, self.weights):
            out[idx[axis]] += w
        return out

    def marginal_error(self) -> float:
        """Worst total-variation distance to the declared marginals."""
        worst = 0.0
        for axis, mu in enumerate(self.marginals):
            worst = max(worst, 0.5 * float(np.abs(self.pushforward(axis) - mu).sum()))
        return worst

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {idx: float(w) for idx, w in zip(self.atoms, self.weights)}


def plan_from_dense(x: np.ndarray, shape, marginals=()) -> TransportPlan:
    x = np.asarray(x, dtype=float).reshape(shape)
    x = np.where(x > 0, x, 0.0)  # clip solver dust at the bound
    atoms, weights = [], []
    for idx in np.argwhere(x > 0):
        atoms.append(tuple(int(i) for i in idx))
        weights.append(float(x[tuple(idx)]))
    return TransportPlan(
        shape=tuple(shape),
        atoms=tuple(atoms),
        weights=np.array(weights),
        marginals=tuple(np.asarray(m, dtype=float) for m in marginals),
    )


# -- multimarginal optimal transport ----------------------------------------


def _as_weights(m) -> np.ndarray:
    if isinstance(m, DiscreteDistribution):
        return np.asarray(m.weights, dtype=float)
    w = np.asarray(m, dtype=float)
    if w.ndim != 1 or np.any(w <= 0):
        raise ValidationError("marginal must be a 1-D vector of positive weights")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValidationError(f"marginal sums to {float(w.sum())!r}, expected 1")
    return w


def _marginal_matrix(shape: Sequence[int]) -> sp.csr_matrix:
    """Stacked pushforward operators, one row block per axis (C-order vars)."""
    blocks = []
    for i in range(len(shape)):
        mats = [
            sp.identity(n, format="csr") if j == i else sp.csr_matrix(np.ones((1, n)))
            for j, n in enumerate(shape)
        ]
        acc = mats[0]
        for m in mats[1:]:
            acc = sp.kron(acc, m, format="csr")
        blocks.append(acc)
    return sp.vstack(blocks, format="csr")


@dataclass(frozen=True)
class MultimarginalResult:
    value: float
    plan: TransportPlan
    potentials: tuple[np.ndarray, ...]


def multimarginal_ot(marginals, cost: np.ndarray, dense_budget: int = DENSE_BUDGET) -> MultimarginalResult:
    """Exact multimarginal OT over the coupling polytope.

    ``cost`` is a dense tensor with one axis per marginal.  Returns the
    optimal value, a sparse plan, and one dual potential per marginal
    atom with  sum_i E_{mu_i}[phi_i] = value  within GAP_TOL.
    """
    weights = [_as_weights(m) for m in marginals]
    shape = tuple(len(w) for w in weights)
    if tuple(np.shape(cost)) != shape:
        raise ValidationError(
            f"cost tensor shape {tuple(np.shape(cost))} does not match marginal sizes {shape}"
        )
    size = int(np.prod(shape))
    if size > dense_budget:
        raise BudgetExceededError(
            f"dense cost tensor has {size} entries > budget {dense_budget}"
        )
    cost = np.asarray(cost, dtype=float)
    shift = float(cost.min())
    problem = LpProblem(
        c=(cost - shift).ravel(),
        a_eq=_marginal_matrix(shape),
        b_eq=np.concatenate(weights),
    )
    sol = _solve_optimal(problem, "multimarginal transport")
    value = sol.value + shift
    plan = plan_from_dense(sol.x, shape, marginals=weights)
    potentials = _split_potentials(sol.duals, shape, shift)
    dual_value = sum(float(p @ w) for p, w in zip(potentials, weights))
    if abs(value - dual_value) > GAP_TOL * (1 + abs(value)):
        raise SolverFailureError(
            "multimarginal duality gap exceeds tolerance",
            details={"value": value, "dual_value": dual_value},
        )
    return MultimarginalResult(value=value, plan=plan, potentials=potentials)


def _split_potentials(duals: np.ndarray, shape, shift: float) -> tuple[np.ndarray, ...]:
    out, ofs = [], 0
    for n in shape:
        out.append(np.array(duals[ofs:ofs + n]))
        ofs += n
    for i in range(1, len(out)):
        pin = out[i][0]
        out[i] = out[i] - pin
        out[0] = out[0] + pin
    out[0] = out[0] + shift
    return tuple(out)


def classical_ot(mu, nu, cost: np.ndarray) -> tuple[float, TransportPlan]:
    """Two-marginal optimal transport; see :func:`multimarginal_ot`."""
    res = multimarginal_ot([mu, nu], np.asarray(cost, dtype=float))
    return res.value, res.plan


# -- fixed-support Wasserstein barycenter ------------------------------------


@dataclass(frozen=True)
class BarycenterLpResult:
    """``potentials[i]`` are the duals of measure i's marginal block;
    sum_i potentials[i] @ mu_i equals the value (LP duality)."""

    value: float
    barycenter: DiscreteDistribution
    plans: tuple[TransportPlan, ...]
    potentials: tuple[np.ndarray, ...]


def wasserstein_barycenter_fixed_support(
    measures, weights, costs, support
) -> BarycenterLpResult:
    """Classical barycenter over measures on a fixed finite support.

    Solved as one joint LP in (nu, gamma^1, ..., gamma^N): each plan
    gamma^i couples nu with measure i, all plans share the first marginal
    nu, and the objective is  sum_i lambda_i <costs[i], gamma^i>  with
    costs[i] of shape (len(support), len(measure_i)).
    """
    if len(support) == 0:
        raise ValidationError("empty barycenter support")
    lam = np.asarray(weights, dtype=float)
    if lam.ndim != 1 or len(lam) != len(measures):
        raise ValidationError("one weight per measure required")
    if np.any(lam <= 0) or abs(float(lam.sum()) - 1.0) > 1e-9:
        raise ValidationError("weights must be positive and sum to 1")
    mus = [_as_weights(m) for m in measures]
    m = len(support)
    mats = [np.asarray(c, dtype=float) for c in costs]
    for i, c in enumerate(mats):
        if c.shape != (m, len(mus[i])):
            raise ValidationError(
                f"cost {i} has shape {c.shape}, expected {(m, len(mus[i]))}"
            )
    n_plan = [m * len(mu) for mu in mus]
    n_vars = m + sum(n_plan)
    offsets = np.cumsum([m] + n_plan)[:-1]

    rows, cols, vals, rhs = [], [], [], []
    row = 0
    for i, mu in enumerate(mus):
        ofs, n_i = offsets[i], len(mu)
        # row sums equal nu
        for k in range(m):
            for j in range(n_i):
                rows.append(row); cols.append(ofs + k * n_i + j); vals.append(1.0)
            rows.append(row); cols.append(k); vals.append(-1.0)
            rhs.append(0.0)
            row += 1
        # column sums equal mu_i
        for j in range(n_i):
            for k in range(m):
                rows.append(row); cols.append(ofs + k * n_i + j); vals.append(1.0)
            rhs.append(float(mu[j]))
            row += 1
    a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(row, n_vars))
    c_vec = np.zeros(n_vars)
    for i, c in enumerate(mats):
        c_vec[offsets[i]:offsets[i] + n_plan[i]] = (lam[i] * c).ravel()
    sol = _solve_optimal(
        LpProblem(c=c_vec, a_eq=a_eq, b_eq=np.array(rhs)), "barycenter LP"
    )
    nu = np.where(sol.x[:m] > 0, sol.x[:m], 0.0)
    total = float(nu.sum())
    if abs(total - 1.0) > MARGINAL_TOL:
        raise SolverFailureError(f"barycenter mass {total!r} != 1")
    nu = nu / total
    plans = tuple(
        plan_from_dense(
            sol.x[offsets[i]:offsets[i] + n_plan[i]], (m, len(mus[i])),
            marginals=(nu, mus[i]),
        )
        for i in range(len(mus))
    )
    potentials = []
    row = 0
    for mu in mus:
        row += m  # skip the nu-linking block
        potentials.append(np.array(sol.duals[row:row + len(mu)]))
        row += len(mu)
    dual_value = sum(float(p @ mu) for p, mu in zip(potentials, mus))
    if abs(dual_value - sol.value) > GAP_TOL * (1 + abs(sol.value)):
        raise SolverFailureError(
            "barycenter duality gap exceeds tolerance",
            details={"value": sol.value, "dual_value": dual_value},
        )
    return BarycenterLpResult(
        value=sol.value,
        barycenter=DiscreteDistribution(support=tuple(support), weights=nu),
        plans=plans,
        potentials=tuple(potentials),
    )
