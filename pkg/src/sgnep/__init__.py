"""Distributed stochastic solver for generalized Nash equilibrium problems.

Agents minimize coupled expected costs over box strategy sets under a
shared affine constraint, communicating dual estimates over a graph. The
package ships the distributed Tikhonov forward-backward iteration, a
competing ride-hailing pricing market built on it, centralized reference
oracles, and an experiment CLI.
"""

from .game import (
    Box,
    CouplingConstraint,
    GameSpec,
    GradientOracle,
    ValidationReport,
    coupling_value,
    project_box,
    project_nonneg,
    validate_game,
)
from .graph import LaplacianView, MultiplierGraph, is_connected, laplacian, neighbor_disagreement
from .schedule import StepSchedule, step_size, validate_schedule
from .solver import (
    AgentState,
    NumericalFailure,
    RunRecord,
    StopRule,
    TikhonovSolver,
    agent_update,
    compact_step,
    residuals,
    run,
)
from .market import (
    MarketOracle,
    MarketParams,
    MarketSample,
    RealizedOutcomes,
    build_game,
    demand,
    drivers_serving,
    effective_demand,
    participation_prob,
    realized_outcomes,
    sample_uncertainty,
    sampled_cost,
    sampled_cost_gradient,
)
from .baselines import (
    BruteForceResult,
    MonotonicityReport,
    ReferenceSolution,
    brute_force_vi,
    monotonicity_probe,
    saa_gradient,
    saa_operator,
    solve_reference,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    StudyArtifact,
    SweepArtifact,
    emit_plot_data,
    load_artifact,
    load_config,
    resolve_config,
    run_convergence_sweep,
    run_market_study,
)

__version__ = "0.1.0"
