"""Dynamic matching equilibria: construction, best responses, verification.

Core claims exercised:
    - solve_matching output verifies end to end (clearing exactly zero,
      optimality gaps within 1e-7, common task marginal within 1e-9 TV),
    - a principal-only market clears with zero wages,
    - constant wage shifts move best-response values by exactly the
      constant and leave the optimal plan unchanged,
    - perturbed wages or plans are caught by the verifier,
    - complementary slackness holds on equilibrium supports.
"""
from __future__ import annotations

import numpy as np
import pytest

from treeot import (
    MatchingInstance,
    PowerCost,
    ValidationError,
    best_response,
    complementary_slackness,
    solve_matching,
    verify_equilibrium,
)
from treeot.matching import Equilibrium, _plan_expectation
from treeot.randomgen import random_tree


def quadratic() -> PowerCost:
    return PowerCost(weight=1.0, exponent=2.0)


def metric() -> PowerCost:
    return PowerCost(weight=1.0, exponent=1.0)


def random_instance(seed: int, n_agents: int = 2) -> MatchingInstance:
    rng = np.random.default_rng(seed)
    principal = random_tree(rng, horizon=2, dim=1, max_branch=2, prefix="p")
    agents = [
        random_tree(rng, horizon=2, dim=1, max_branch=2, prefix=f"a{i}_")
        for i in range(n_agents)
    ]
    tasks = random_tree(rng, horizon=2, dim=1, max_branch=3, prefix="y")
    return MatchingInstance(
        principal=principal,
        utility=quadratic(),
        agents=agents,
        agent_costs=[quadratic()] * n_agents,
        tasks=tasks,
    )


def test_instance_validation():
    rng = np.random.default_rng(0)
    principal = random_tree(rng, horizon=2, dim=1, prefix="p")
    short = random_tree(rng, horizon=1, dim=1, prefix="s")
    with pytest.raises(ValidationError, match="horizon"):
        MatchingInstance(
            principal=principal, utility=quadratic(), agents=[short],
            agent_costs=[quadratic()], tasks=principal,
        )
    with pytest.raises(ValidationError, match="one cost"):
        MatchingInstance(
            principal=principal, utility=quadratic(), agents=[principal],
            agent_costs=[], tasks=principal,
        )


def test_principal_only_market_has_zero_wage():
    rng = np.random.default_rng(1)
    principal = random_tree(rng, horizon=2, dim=1, max_branch=2, prefix="p")
    tasks = random_tree(rng, horizon=2, dim=1, max_branch=2, prefix="y")
    instance = MatchingInstance(
        principal=principal, utility=quadratic(), agents=[], agent_costs=[], tasks=tasks
    )
    eq = solve_matching(instance)
    assert np.max(np.abs(eq.wages[0])) == 0.0
    # nu is the principal's optimal task law: the zero-wage best response
    value, plan = best_response(instance, 0, np.zeros(tasks.n_leaves))
    assert eq.values[0] == pytest.approx(value, abs=1e-8)
    assert verify_equilibrium(instance, eq).passed


def test_identical_populations_on_own_support_are_free():
    rng = np.random.default_rng(2)
    tree = random_tree(rng, horizon=2, dim=1, max_branch=2, prefix="s")
    # utility -c keeps c^0 = -u = +metric distance
    instance = MatchingInstance(
        principal=tree,
        utility=PowerCost(weight=1.0, exponent=1.0),
        agents=[tree, tree],
        agent_costs=[metric(), metric()],
        tasks=tree,
    )
    eq = solve_matching(instance)
    report = verify_equilibrium(instance, eq)
    assert report.passed
    assert 0.5 * float(np.abs(eq.nu.weights - tree.leaf_law()).sum()) <= 1e-9
    # agent costs are zero on the identity matching; values are wage transfers
    total = sum(eq.values)
    # utility term enters with the opposite sign; total surplus is -(value sum)
    assert total == pytest.approx(
        sum(
            _plan_expectation(t, instance.tasks, pl, c)
            for t, pl, c in zip(instance.populations, eq.plans, instance.costs)
        ),
        abs=1e-8,
    )


@pytest.mark.parametrize("seed", range(6))
def test_solve_matching_passes_verification(seed):
    instance = random_instance(2000 + seed)
    eq = solve_matching(instance)
    report = verify_equilibrium(instance, eq)
    assert report.clearing_ok and report.worst_clearing == 0.0
    assert report.optimality_ok
    assert all(abs(g) <= 1e-7 for g in report.optimality_gaps)
    assert report.common_marginal_ok and report.worst_marginal_tv <= 1e-9
    assert report.worst_causality <= 1e-9
    assert report.passed


@pytest.mark.parametrize("seed", range(3))
def test_complementary_slackness_on_support(seed):
    instance = random_instance(2100 + seed)
    eq = solve_matching(instance)
    min_slack, support_slack = complementary_slackness(instance, eq)
    assert min_slack >= -1e-8
    assert support_slack <= 1e-8


def test_best_response_zero_wage_on_own_support_is_free():
    rng = np.random.default_rng(3)
    tree = random_tree(rng, horizon=2, dim=1, max_branch=2, prefix="s")
    instance = MatchingInstance(
        principal=tree, utility=metric(), agents=[tree],
        agent_costs=[metric()], tasks=tree,
    )
    value, plan = best_response(instance, 1, np.zeros(tree.n_leaves))
    assert value == pytest.approx(0.0, abs=1e-10)


def test_best_response_constant_wage_shifts_value_exactly():
    instance = random_instance(4)
    zeros = np.zeros(instance.tasks.n_leaves)
    v0, plan0 = best_response(instance, 1, zeros)
    kappa = 3.75
    v1, plan1 = best_response(instance, 1, zeros + kappa)
    assert v1 - v0 == pytest.approx(-kappa, abs=1e-12)
    assert plan0.atoms == plan1.atoms
    assert plan0.weights == pytest.approx(plan1.weights, abs=0)


def test_best_response_matches_equilibrium_plan_value():
    instance = random_instance(5)
    eq = solve_matching(instance)
    for i in range(len(instance.populations)):
        value, _ = best_response(instance, i, eq.wages[i])
        achieved = _plan_expectation(
            instance.populations[i], instance.tasks, eq.plans[i],
            instance.costs[i], eq.wages[i],
        )
        assert achieved == pytest.approx(value, abs=1e-8)


def test_wage_shift_neutrality_between_agents():
    instance = random_instance(6)
    eq = solve_matching(instance)
    kappa = 0.8
    shifted = [w.copy() for w in eq.wages]
    shifted[1] = shifted[1] + kappa
    shifted[2] = shifted[2] - kappa
    # clearing still holds and the best-response plans are unchanged
    assert np.max(np.abs(sum(shifted))) <= 1e-12
    for i in (1, 2):
        v_old, plan_old = best_response(instance, i, eq.wages[i])
        v_new, plan_new = best_response(instance, i, shifted[i])
        assert v_new - v_old == pytest.approx(-kappa if i == 1 else kappa, abs=1e-10)
        assert plan_old.atoms == plan_new.atoms
        assert plan_old.weights == pytest.approx(plan_new.weights, abs=0)


def test_verify_catches_broken_clearing():
    instance = random_instance(7)
    eq = solve_matching(instance)
    wages = [w.copy() for w in eq.wages]
    wages[1][0] += 0.1
    broken = Equilibrium(
        instance=instance, nu=eq.nu, wages=tuple(wages), plans=eq.plans,
        values=eq.values, potentials=eq.potentials,
        mart_coefficients=eq.mart_coefficients,
    )
    report = verify_equilibrium(instance, broken)
    assert not report.clearing_ok
    assert instance.tasks.leaf_ids()[0] in report.clearing_witnesses
    assert report.worst_clearing == pytest.approx(0.1, abs=1e-12)


def test_verify_catches_suboptimal_plan():
    # seed chosen so the product plan is non-degenerate (strict gap ~1.6)
    instance = random_instance(2000)
    eq = solve_matching(instance)
    # replace agent 1's plan by the product plan; on a generic instance this
    # is strictly suboptimal
    tree = instance.agents[0]
    law_x, law_y = tree.leaf_law(), np.asarray(eq.nu.weights)
    dense = np.outer(law_x, law_y)
    from treeot.lp import plan_from_dense

    product_plan = plan_from_dense(dense, dense.shape, marginals=(law_x, law_y))
    plans = list(eq.plans)
    plans[1] = product_plan
    tampered = Equilibrium(
        instance=instance, nu=eq.nu, wages=eq.wages, plans=tuple(plans),
        values=eq.values, potentials=eq.potentials,
        mart_coefficients=eq.mart_coefficients,
    )
    report = verify_equilibrium(instance, tampered)
    assert report.optimality_gaps[1] > 1e-7
    assert not report.optimality_ok


def test_wage_table_is_keyed_by_task_path_sequences():
    instance = random_instance(9)
    eq = solve_matching(instance)
    table = eq.wage_table()
    tasks = instance.tasks
    expected_keys = {
        "/".join(tasks.path_of(tasks.horizon, j).ids) for j in range(tasks.n_leaves)
    }
    assert set(table) == expected_keys
    for wages in table.values():
        assert len(wages) == len(instance.populations)
        assert sum(wages[1:]) + wages[0] == pytest.approx(0.0, abs=1e-12)
