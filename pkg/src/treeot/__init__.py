"""Causal, bicausal and multicausal optimal transport on scenario trees."""

from .barycenters import (
    AnticausalBarycenterResult,
    BarycenterProcess,
    BcBarycenterResult,
    CausalBarycenterSolution,
    CounterexampleReport,
    Phi0Selector,
    PowerCost,
    SeparableCost,
    TableCost,
    aggregate_cost,
    anticausal_barycenter,
    bc_barycenter,
    bc_bary_value,
    causal_barycenter,
    causal_ot,
    counterexample_demo,
    grid_selector,
    phi0_quadratic,
)
from .costs import dense_tensor, lp_sum, pairwise_power, value_cost
from .errors import (
    BudgetExceededError,
    IncompletePolicyError,
    SolverFailureError,
    TreeFormatError,
    TreeOTError,
    ValidationError,
)
from .lp import (
    LpProblem,
    LpSolution,
    TransportPlan,
    classical_ot,
    multimarginal_ot,
    solve_lp,
    wasserstein_barycenter_fixed_support,
)
from .matching import (
    Equilibrium,
    EquilibriumReport,
    MatchingInstance,
    best_response,
    complementary_slackness,
    solve_matching,
    verify_equilibrium,
)
from .multicausal import (
    CausalityReport,
    DualCertificate,
    KernelPolicy,
    MulticausalCoupling,
    ValueFunction,
    assemble_coupling,
    aw_distance,
    brute_force_mcot,
    coupling_from_id_atoms,
    glue,
    mc_dpp,
    restrict_coupling,
    verify_certificate,
    verify_multicausal,
)
from .trees import (
    DiscreteDistribution,
    NodePath,
    ProductNodeTuple,
    ScenarioTree,
    conditional_kernel,
    dump_tree,
    load_tree,
    path_value,
    quantize_gauss_hermite,
)

__version__ = "0.1.0"
