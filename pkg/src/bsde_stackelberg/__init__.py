"""Stackelberg equilibria of linear-quadratic games driven by BSDEs.

Feedback representations via four Riccati equations, pathwise Monte
Carlo reconstruction of the equilibrium trajectories, independent
brute-force optimality oracles, and an optimal-consumption application.
"""

from .model import (
    AffineControl,
    CoefficientPath,
    Dimensions,
    LQGameSpec,
    SpecError,
    TerminalCondition,
    TimeGrid,
    ValidationReport,
    Violation,
    eval_coefficient,
    validate_spec,
)
from .odeint import (
    DivergenceError,
    OdeDirection,
    SingularityError,
    SolvabilityReport,
    integrate_matrix_ode,
    matrix_exponential,
    solvability_scan,
)
from .riccati import (
    RiccatiPath,
    StackedSystem,
    UnsolvableError,
    build_stacked_system,
    pi1_closed_form,
    pi2_closed_form,
    riccati_residual,
    solve_p1,
    solve_p2,
    solve_pi1,
    solve_pi2,
)
from .sampling import MonteCarloConfig, PathBundle, coarsen, sample_brownian
from .follower import (
    AffineBSDESolution,
    FollowerEnsemble,
    check_follower_stationarity,
    closed_loop_residual,
    follower_cost,
    follower_feedback,
    follower_pipeline,
    reconstruct_follower_state,
    simulate_varphi,
    solve_phi_eta,
)
from .leader import (
    LeaderEnsemble,
    StackelbergSolution,
    check_leader_stationarity,
    diffusion_consistency_gap,
    equilibrium_follower_control,
    leader_bsde_residual,
    leader_cost,
    leader_feedback,
    reconstruct_XYZ,
    simulate_tilde_varphi,
    solve_equilibrium,
    solve_tilde_phi,
)
from .oracle import (
    DiscreteLQProblem,
    NonConvexError,
    OracleResult,
    build_discrete_problem,
    deterministic_follower_oracle,
    deterministic_leader_oracle,
    perturbation_suite,
)
from .finance import (
    ConsumptionSolution,
    MarketParams,
    build_finance_spec,
    consumption_equilibrium,
    gamma_propagator,
    initial_reserve,
    scalar_p1,
    scalar_p2,
)
from .scenario import (
    Scenario,
    hand_solvable_scenario,
    load_scenario,
    make_constant_spec,
    random_deterministic_scenario,
    stochastic_scenario,
)

__version__ = "0.1.0"
