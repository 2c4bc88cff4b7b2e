"""Market making against an aggregated rule-of-thumb competitor.

A reference market maker quotes ask/bid depths around a Brownian mid-price
and competes for Poisson order flow with a pooled competitor whose depths
are linear in his own inventory plus noise.  The package provides

* an approximate closed-form quoting policy obtained from a linear ODE
  system solved with a matrix exponential,
* a backward Euler solver for the exact value recursion as a benchmark,
* a discrete-time market simulator with reproducible per-path substreams
  and a reset/step environment interface, and
* an experiment harness for comparative statics, common-random-number
  strategy comparisons and the generosity-event census.
"""

from .model import (
    DepthPair,
    ModelParams,
    SimState,
    competitor_depths,
    fill_probability,
    mark_to_market,
    terminal_value,
)
from .expm import expm, expm_action
from .closed_form import (
    ClosedFormPolicy,
    OmegaTable,
    approximation_residual,
    build_generator,
    hat_depths,
    solve_omega,
    terminal_vector,
    truncated_depths,
)
from .hjb import (
    EulerPolicy,
    ValueGrid,
    euler_policy,
    hamiltonian_side,
    solve_backward,
    terminal_condition,
)
from .policy import (
    CompetitorMatchStrategy,
    ConstantDepthStrategy,
    Strategy,
    TabulatedDepthPolicy,
    quote_from_g_row,
)
from .simulate import (
    BatchResult,
    MarketMakingEnv,
    PathResult,
    StepDraws,
    Trajectory,
    run_path,
    simulate_paths,
    step,
    substream,
)
from .experiments import (
    CensusResult,
    ComparisonReport,
    PairedTest,
    StrategyStats,
    generosity_census,
    paired_t_test,
    regularized_incomplete_beta,
    run_comparison,
    statics_depth_surface,
    statics_time_surface,
    student_t_sf,
)

__version__ = "0.1.0"
