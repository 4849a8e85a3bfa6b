"""Command-line interface.

One command per process invocation; reports are emitted as JSON (or a
terse text rendering) with a versioned schema.  Identical configurations
on identical inputs produce byte-identical JSON reports: solves are
deterministic, serialisation order is fixed, and wall-clock timing is
only included when explicitly requested with ``--timing``.

Exit codes: 0 success, 2 validation error, 3 budget refusal, 4 solver
failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import barycenters as bary
from . import costs as costs_mod
from . import lp as lp_mod
from . import matching as matching_mod
from . import multicausal as mc
from .errors import BudgetExceededError, SolverFailureError, ValidationError
from .trees import ScenarioTree, dump_tree, load_tree

SCHEMA = "1"

EXIT_VALIDATION = 2
EXIT_BUDGET = 3
EXIT_SOLVER = 4


@dataclass(frozen=True)
class RunConfig:
    """Echoed into every report; validated before dispatch."""

    command: str
    inputs: tuple[str, ...]
    cost: str | None
    tolerance: float
    budget: int
    output: str | None
    format: str
    seed: int | None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValidationError(f"tolerance must be positive, got {self.tolerance!r}")
        if self.budget < 1:
            raise ValidationError(f"budget must be at least 1, got {self.budget!r}")


def _config_of(args) -> RunConfig:
    inputs = []
    for field in ("trees", "tasks", "instance", "coupling", "grid"):
        value = getattr(args, field, None)
        if isinstance(value, str):
            inputs.append(value)
        elif value:
            inputs.extend(value)
    return RunConfig(
        command=args.command,
        inputs=tuple(inputs),
        cost=getattr(args, "cost", None),
        tolerance=args.tol,
        budget=args.budget,
        output=args.output,
        format=args.format,
        seed=args.seed,
    )


def _read_tree(path: str) -> ScenarioTree:
    try:
        with open(path, "rb") as fh:
            return load_tree(fh.read())
    except OSError as exc:
        raise ValidationError(f"cannot read tree file {path!r}: {exc}") from None


def _threads() -> int:
    raw = os.environ.get("TREEOT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"TREEOT_THREADS must be an integer, got {raw!r}") from None


def _parse_separable_cost(spec) -> bary.SeparableCost:
    """Cost descriptors: {"kind": "power", "p": 2, "weight": w} or matrices."""
    if isinstance(spec, bary.SeparableCost):
        return spec
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError(f"cannot parse cost descriptor {spec!r}")
    if spec["kind"] == "power":
        return bary.PowerCost(
            weight=float(spec.get("weight", 1.0)), exponent=float(spec.get("p", 2.0))
        )
    if spec["kind"] == "matrix":
        return bary.TableCost(
            [(tbl["x"], tbl["y"], np.asarray(tbl["c"], dtype=float))
             for tbl in spec["tables"]]
        )
    raise ValidationError(f"unknown cost kind {spec['kind']!r}")


def _parse_power_spec(spec: str, n: int) -> list[bary.SeparableCost]:
    """Per-process separable costs from ``power:p[:w1,...,wN]`` or the JSON
    form ``{"kind": "power", "p": 2, "weights": [...]}``."""
    if spec.lstrip().startswith("{"):
        doc = json.loads(spec)
        if doc.get("kind") != "power":
            raise ValidationError(f"unsupported separable cost spec {spec!r}")
        p = float(doc.get("p", 2.0))
        weights = [float(w) for w in doc.get("weights", [1.0] * n)]
        if len(weights) != n:
            raise ValidationError(f"expected {n} weights in {spec!r}")
        return [bary.PowerCost(weight=w, exponent=p) for w in weights]
    kind, _, rest = spec.partition(":")
    if kind != "power":
        raise ValidationError(f"unsupported separable cost spec {spec!r}")
    p_str, _, w_str = rest.partition(":")
    p = float(p_str) if p_str else 2.0
    if w_str:
        weights = [float(w) for w in w_str.split(",")]
        if len(weights) != n:
            raise ValidationError(f"expected {n} weights in {spec!r}")
    else:
        weights = [1.0] * n
    return [bary.PowerCost(weight=w, exponent=p) for w in weights]


def _round_floats(obj):
    if isinstance(obj, float):
        return float(repr(obj))
    return obj


def _emit(report: dict, args) -> None:
    if args.timing:
        report["timing"] = {"seconds": time.perf_counter() - args._t0}
    report["solver"] = {
        "lp_solves": lp_mod.stats.solves,
        "lp_iterations": lp_mod.stats.iterations,
    }
    if args.format == "json":
        text = json.dumps(report, indent=2, sort_keys=True)
    else:
        lines = [f"{k} = {v}" for k, v in sorted(_flatten(report).items())]
        text = "\n".join(lines)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _flatten(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(obj, (list, tuple)):
        out[prefix.rstrip(".")] = json.dumps(obj)
    else:
        out[prefix.rstrip(".")] = obj
    return out


def _coupling_json(coupling: mc.MulticausalCoupling) -> list[dict]:
    return [
        {"leaves": list(ids), "w": w} for ids, w in coupling.atom_ids()
    ]


def _certificate_json(trees, cert: mc.DualCertificate) -> dict:
    potentials = []
    for tree, f in zip(trees, cert.potentials):
        potentials.append(
            {leaf: float(v) for leaf, v in zip(tree.leaf_ids(), f)}
        )
    coefficients = [
        {"i": i, "t": t, "others": list(others), "child": child, "a": a}
        for (i, t, others, child), a in sorted(cert.coefficients.items())
    ]
    return {"potentials": potentials, "coefficients": coefficients}


def _plan_json(plan: lp_mod.TransportPlan, row_ids, col_ids) -> list[dict]:
    return [
        {"from": row_ids[a], "to": col_ids[b], "w": float(w)}
        for (a, b), w in sorted(zip(plan.atoms, plan.weights))
    ]


# -- command implementations ---------------------------------------------------


def _cmd_awdist(args) -> dict:
    t1, t2 = _read_tree(args.trees[0]), _read_tree(args.trees[1])
    cost = costs_mod.lp_sum(args.p)
    res = mc.mc_dpp([t1, t2], cost, tuple_budget=args.budget, threads=_threads())
    value = float(max(res.value, 0.0) ** (1.0 / args.p))
    lp_value, coupling, cert = mc.brute_force_mcot([t1, t2], cost, tuple_budget=args.budget)
    return {
        "schema": SCHEMA,
        "command": "awdist",
        "values": {
            "aw_distance": value,
            "p": args.p,
            "dpp_value": res.value,
            "oracle_value": lp_value,
            "duality_gap": abs(lp_value - cert.potential_total([t1, t2])),
        },
        "certificate": {
            "coupling": _coupling_json(coupling),
            "duals": _certificate_json([t1, t2], cert),
        },
    }


def _cmd_mcot(args) -> dict:
    trees = [_read_tree(p) for p in args.trees]
    cost = costs_mod.parse_cost_spec(args.cost)
    res = mc.mc_dpp(trees, cost, tuple_budget=args.budget, threads=_threads())
    lp_value, coupling, cert = mc.brute_force_mcot(trees, cost, tuple_budget=args.budget)
    values = {
        "dpp_value": res.value,
        "duality_gap": abs(lp_value - cert.potential_total(trees)),
    }
    if args.oracle:
        values["oracle_value"] = lp_value
        values["dpp_oracle_gap"] = abs(res.value - lp_value)
    report = {
        "schema": SCHEMA,
        "command": "mcot",
        "values": values,
        "certificate": {
            "coupling": _coupling_json(coupling),
            "duals": _certificate_json(trees, cert),
        },
    }
    check = mc.verify_multicausal(coupling, trees, tol=args.tol)
    report["verification"] = {
        "multicausal": check.passed,
        "worst_violation": check.worst_violation,
    }
    return report


def _selector_for(args, costs, horizon):
    if args.grid:
        with open(args.grid, "r", encoding="utf-8") as fh:
            grids = json.load(fh)
        if len(grids) != horizon:
            raise ValidationError(f"grid file must list {horizon} per-time grids")
        return bary.grid_selector(costs, grids, eps=args.eps)
    for c in costs:
        if not isinstance(c, bary.PowerCost) or c.exponent != 2.0:
            raise ValidationError(
                "closed-form selector needs quadratic costs; pass --grid otherwise"
            )
    total = sum(c.weight for c in costs)
    return bary.phi0_quadratic([c.weight / total for c in costs])


def _cmd_bary_bc(args) -> dict:
    trees = [_read_tree(p) for p in args.trees]
    costs = _parse_power_spec(args.cost, len(trees))
    selector = _selector_for(args, costs, trees[0].horizon)
    res = bary.bc_barycenter(trees, costs, selector, tuple_budget=args.budget)
    agg = bary.aggregate_cost(costs, selector)
    lp_value, coupling, cert = mc.brute_force_mcot(trees, agg, tuple_budget=args.budget)
    consistency = bary.bc_bary_value(trees, costs, res.process.tree, tuple_budget=args.budget)
    return {
        "schema": SCHEMA,
        "command": "bary-bc",
        "values": {
            "barycenter_value": res.value,
            "oracle_value": lp_value,
            "duality_gap": abs(lp_value - cert.potential_total(trees)),
            "recomputed_value_at_barycenter": consistency,
        },
        "barycenter": json.loads(dump_tree(res.process.tree)),
        "certificate": {
            "coupling": _coupling_json(res.coupling),
            "duals": _certificate_json(trees, cert),
        },
    }


def _cmd_bary_c(args) -> dict:
    trees = [_read_tree(p) for p in args.trees]
    tasks = _read_tree(args.tasks)
    costs = _parse_power_spec(args.cost, len(trees))
    sol = bary.causal_barycenter(trees, tasks, costs, tuple_budget=args.budget)
    min_slack, support_slack = sol.support_slack(costs)
    task_ids = tasks.leaf_ids()
    return {
        "schema": SCHEMA,
        "command": "bary-c",
        "values": {
            "barycenter_value": sol.value,
            "dual_value": sol.dual_value(),
            "duality_gap": abs(sol.value - sol.dual_value()),
            "min_dual_slack": min_slack,
            "worst_support_slack": support_slack,
        },
        "nu": {leaf: float(w) for leaf, w in zip(task_ids, sol.nu.weights)},
        "certificate": {
            "potentials": [
                {node.node_id: float(v) for node, v in zip(t.levels[0], f)}
                for t, f in zip(trees, sol.potentials)
            ],
            "task_potentials": [
                {leaf: float(v) for leaf, v in zip(task_ids, g)}
                for g in sol.task_potentials
            ],
            "plans": [
                _plan_json(plan, tree.leaf_ids(), task_ids)
                for tree, plan in zip(trees, sol.plans)
            ],
        },
    }


def _cmd_bary_anticausal(args) -> dict:
    trees = [_read_tree(p) for p in args.trees]
    tasks = _read_tree(args.tasks)
    costs = _parse_power_spec(args.cost, len(trees))
    res = bary.anticausal_barycenter(trees, costs, tasks, tuple_budget=args.budget)
    task_ids = tasks.leaf_ids()
    return {
        "schema": SCHEMA,
        "command": "bary-anticausal",
        "values": {"barycenter_value": res.value},
        "nu": {leaf: float(w) for leaf, w in zip(task_ids, res.nu.weights)},
        "certificate": {
            "plans": [
                _plan_json(plan, task_ids, tree.leaf_ids())
                for tree, plan in zip(trees, res.plans)
            ],
            "kernels": [
                {y: dict(sorted(k.items())) for y, k in sorted(kern.items())}
                for kern in res.kernels
            ],
            "potentials": [
                {leaf: float(v) for leaf, v in zip(tree.leaf_ids(), f)}
                for tree, f in zip(trees, res.potentials)
            ],
        },
    }


def _cmd_match(args) -> dict:
    with open(args.instance, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        principal = ScenarioTree.from_levels(doc["principal"]["tree"]["levels"])
        utility = _parse_separable_cost(doc["principal"]["utility"])
        agents = [ScenarioTree.from_levels(a["tree"]["levels"]) for a in doc["agents"]]
        agent_costs = [_parse_separable_cost(a["cost"]) for a in doc["agents"]]
        tasks = ScenarioTree.from_levels(doc["tasks"]["levels"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed matching instance: missing {exc}") from None
    instance = matching_mod.MatchingInstance(
        principal=principal, utility=utility, agents=agents,
        agent_costs=agent_costs, tasks=tasks,
    )
    eq = matching_mod.solve_matching(instance, tuple_budget=args.budget)
    report = matching_mod.verify_equilibrium(instance, eq)
    min_slack, support_slack = matching_mod.complementary_slackness(instance, eq)
    task_ids = tasks.leaf_ids()
    return {
        "schema": SCHEMA,
        "command": "match",
        "values": {
            "agent_values": list(eq.values),
            "equilibrium_ok": report.passed,
        },
        "wages": eq.wage_table(),
        "nu": {leaf: float(w) for leaf, w in zip(task_ids, eq.nu.weights)},
        "certificate": {
            "plans": [
                _plan_json(plan, tree.leaf_ids(), task_ids)
                for tree, plan in zip(instance.populations, eq.plans)
            ],
            "potentials": [
                {node.node_id: float(v) for node, v in zip(t.levels[0], f)}
                for t, f in zip(instance.populations, eq.potentials)
            ],
        },
        "verification": {
            "clearing_ok": report.clearing_ok,
            "worst_clearing": report.worst_clearing,
            "optimality_gaps": list(report.optimality_gaps),
            "common_marginal_ok": report.common_marginal_ok,
            "worst_marginal_tv": report.worst_marginal_tv,
            "min_dual_slack": min_slack,
            "worst_support_slack": support_slack,
        },
    }


def _cmd_verify_coupling(args) -> dict:
    trees = [_read_tree(p) for p in args.trees]
    with open(args.coupling, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    atoms = [(a["leaves"], float(a["w"])) for a in doc["atoms"]]
    coupling = mc.coupling_from_id_atoms(trees, atoms)
    report = mc.verify_multicausal(coupling, trees, tol=args.tol)
    return {
        "schema": SCHEMA,
        "command": "verify-coupling",
        "values": {
            "pass": report.passed,
            "worst_violation": report.worst_violation,
        },
        "witnesses": [
            {
                "i": w.process,
                "t": w.t,
                "others": list(w.others),
                "child": w.child,
                "violation": w.violation,
            }
            for w in report.witnesses
        ],
    }


def _cmd_counterexample(args) -> dict:
    report = bary.counterexample_demo(args.n)
    return {
        "schema": SCHEMA,
        "command": "counterexample",
        "values": {
            "n_quant": report.n_quant,
            "cost_phi0_construction": report.cost_phi0_construction,
            "cost_canonical_candidate": report.cost_canonical_candidate,
            "gap": report.gap,
            "moment2": report.moment2,
            "moment6": report.moment6,
        },
    }


# -- wiring ---------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeot",
        description="Causal, bicausal and multicausal optimal transport on scenario trees.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", help="write the report to this path instead of stdout")
    common.add_argument("--format", choices=("json", "text"), default="json")
    common.add_argument("--budget", type=int, default=mc.TUPLE_BUDGET,
                        help="leaf-tuple enumeration budget")
    common.add_argument("--tol", type=float, default=mc.CAUSALITY_TOL,
                        help="verification tolerance for causality checks")
    common.add_argument("--timing", action="store_true",
                        help="include wall-clock timing (breaks byte-identical reports)")
    common.add_argument("--seed", type=int, default=None,
                        help="seed echoed to random-instance harnesses")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("awdist", help="adapted Wasserstein distance between two trees")
    p.add_argument("trees", nargs=2)
    p.add_argument("--p", type=float, default=2.0)
    p.set_defaults(fn=_cmd_awdist)

    p = add_parser("mcot", help="multicausal optimal transport")
    p.add_argument("trees", nargs="+")
    p.add_argument("--cost", default="lp_sum:2",
                   help="lp_sum:p | pairwise_power:p | tensor:FILE")
    p.add_argument("--oracle", action="store_true",
                   help="also report the brute-force LP value and the DPP gap")
    p.set_defaults(fn=_cmd_mcot)

    p = add_parser("mcot-oracle", help="mcot with the brute-force comparison forced on")
    p.add_argument("trees", nargs="+")
    p.add_argument("--cost", default="lp_sum:2",
                   help="lp_sum:p | pairwise_power:p | tensor:FILE")
    p.set_defaults(fn=_cmd_mcot, oracle=True)

    p = add_parser("bary-bc", help="bicausal barycenter (multicausal reformulation)")
    p.add_argument("trees", nargs="+")
    p.add_argument("--cost", default="power:2", help="power:p[:w1,...,wN]")
    p.add_argument("--grid", help="JSON file with per-time selector grids")
    p.add_argument("--eps", type=float, default=0.0, help="declared grid-selector slack")
    p.set_defaults(fn=_cmd_bary_bc)

    p = add_parser("bary-c", help="causal barycenter on a task tree")
    p.add_argument("trees", nargs="+")
    p.add_argument("--tasks", required=True, help="task support tree (probabilities ignored)")
    p.add_argument("--cost", default="power:2", help="power:p[:w1,...,wN]")
    p.set_defaults(fn=_cmd_bary_c)

    p = add_parser("bary-anticausal", help="anticausal barycenter on a task tree")
    p.add_argument("trees", nargs="+")
    p.add_argument("--tasks", required=True)
    p.add_argument("--cost", default="power:2", help="power:p[:w1,...,wN]")
    p.set_defaults(fn=_cmd_bary_anticausal)

    p = add_parser("match", help="dynamic matching equilibrium")
    p.add_argument("instance", help="matching instance JSON")
    p.set_defaults(fn=_cmd_match)

    p = add_parser("verify-coupling", help="test a coupling for multicausality")
    p.add_argument("coupling", help="coupling JSON with leaf-id atoms")
    p.add_argument("--trees", nargs="+", required=True)
    p.set_defaults(fn=_cmd_verify_coupling)

    p = add_parser("counterexample", help="quantised Gaussian causal counterexample")
    p.add_argument("--n", type=int, default=4, help="quantisation size (>= 4)")
    p.set_defaults(fn=_cmd_counterexample)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    args._t0 = time.perf_counter()
    lp_mod.stats.reset()
    try:
        config = _config_of(args)
        report = args.fn(args)
        report["config"] = asdict(config)
        report["config"]["inputs"] = list(config.inputs)
        if args.seed is not None:
            report["config_seed"] = args.seed
        _emit(report, args)
        return 0
    except BudgetExceededError as exc:
        print(f"treeot: budget refused: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except SolverFailureError as exc:
        print(f"treeot: solver failure: {exc} {exc.details}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValidationError, ValueError) as exc:
        print(f"treeot: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(run())
