"""Random instances for the test harness and the acceptance suite.

All generators take an explicit ``numpy.random.Generator`` so that runs
are reproducible from a single seed.
"""
from __future__ import annotations

import numpy as np

from .lp import TransportPlan, multimarginal_ot
from .multicausal import KernelPolicy, MulticausalCoupling, PolicyPlan, assemble_coupling
from .trees import ScenarioTree


def random_tree(
    rng: np.random.Generator,
    horizon: int = 2,
    dim: int = 1,
    max_branch: int = 3,
    min_branch: int = 1,
    scale: float = 1.0,
    prefix: str = "n",
) -> ScenarioTree:
    """Random tree with per-node branching in [min_branch, max_branch].

    Transition probabilities are bounded away from zero; values are
    centred Gaussians with the given scale.
    """
    levels = []
    counter = 0
    prev: list[str] = []
    for t in range(1, horizon + 1):
        nodes = []
        parents = prev if t > 1 else [None]
        for parent in parents:
            width = int(rng.integers(min_branch, max_branch + 1))
            raw = rng.random(width) + 0.2
            probs = raw / raw.sum()
            probs[-1] = 1.0 - float(probs[:-1].sum())  # exact unit sum
            for b in range(width):
                nodes.append(
                    {
                        "id": f"{prefix}{t}_{counter}",
                        "parent": parent,
                        "p": float(probs[b]),
                        "x": [float(v) for v in rng.normal(0.0, scale, size=dim)],
                    }
                )
                counter += 1
        levels.append(nodes)
        prev = [n["id"] for n in nodes]
    return ScenarioTree.from_levels(levels)


def random_policy(rng: np.random.Generator, trees) -> KernelPolicy:
    """A random feasible kernel policy (hence a random multicausal coupling).

    At every node tuple the one-step coupling is a mixture of the
    product kernel and an optimal-transport vertex for a random cost,
    which samples both interior and extreme points of the polytope.
    """
    trees = tuple(trees)
    horizon = trees[0].horizon
    plans: dict = {}

    def one_step(children, kernels):
        shape = tuple(len(k) for k in kernels)
        vertex = multimarginal_ot(kernels, rng.normal(size=shape)).plan
        alpha = float(rng.random())
        dense = np.zeros(shape)
        for idx, w in zip(vertex.atoms, vertex.weights):
            dense[idx] += alpha * w
        product = kernels[0]
        for k in kernels[1:]:
            product = np.multiply.outer(product, k)
        dense += (1.0 - alpha) * product
        atoms = tuple(tuple(int(i) for i in idx) for idx in np.argwhere(dense > 0))
        return PolicyPlan(
            children=children,
            plan=TransportPlan(
                shape=shape,
                atoms=atoms,
                weights=np.array([dense[a] for a in atoms]),
                marginals=tuple(kernels),
            ),
        )

    roots = tuple(tuple(range(t.level_size(1))) for t in trees)
    root_kernels = [np.array([n.prob for n in t.levels[0]]) for t in trees]
    plans[(0, ())] = one_step(roots, root_kernels)
    for t in range(1, horizon):
        for idx in np.ndindex(*(t_.level_size(t) for t_ in trees)):
            children = tuple(tr.children(t, k) for tr, k in zip(trees, idx))
            kernels = [
                np.array([tr.node(t + 1, j).prob for j in ch])
                for tr, ch in zip(trees, children)
            ]
            plans[(t, idx)] = one_step(children, kernels)
    return KernelPolicy(trees=trees, plans=plans)


def random_multicausal_coupling(rng, trees) -> MulticausalCoupling:
    return assemble_coupling(random_policy(rng, trees))
