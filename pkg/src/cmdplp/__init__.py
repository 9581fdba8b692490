"""Occupancy-measure LP toolkit for constrained MDPs.

Pipeline: build the occupancy LP of a tabular CMDP, identify one optimal
basis (exactly or from samples), adaptively resolve the basis's linear system
against shrinking budgets, and extract and evaluate the averaged policy.
"""

from .basis import (
    BasisReport,
    DoublingResult,
    HardnessConstants,
    hardness_constants,
    identify_basis_doubling,
    identify_basis_empirical,
    identify_basis_true,
    verify_basis,
)
from .estimation import ConfidenceParams, EmpiricalEstimates, build_empirical_lp, collect_uniform, gaps, rad
from .evaluation import (
    ValueReport,
    episodic_dp,
    err_metric,
    evaluate_exact,
    evaluate_monte_carlo,
    regret_report,
    value_iteration,
)
from .instances import (
    CmdpInstance,
    EpisodicInstance,
    RngHandle,
    Sample,
    load_instance,
    random_episodic_instance,
    random_instance,
    sample_generative,
    save_instance,
    slater_witness,
)
from .lp import (
    BasisPair,
    LpSolution,
    PolicyTable,
    StandardLp,
    build_finite_lp,
    build_infinite_lp,
    extract_policy,
    smallest_singular_value,
    solve_restricted_dual,
    solve_restricted_primal,
    solve_square_system,
)
from .resolving import (
    ResolveState,
    RunOutput,
    project_capped_simplex,
    resolve_step,
    run_adaptive_resolving,
    run_offpolicy,
    run_onpolicy,
)

__version__ = "0.1.0"
