"""Simulation and analysis of the continuous-time centroid model.

``n`` adhesion sites attach to and detach from a substrate.  A site attaches
at the current centroid of the attached sites plus a random perturbation,
and the centroid moves accordingly.
"""

from .analysis import (
    CountDistribution,
    VelocityEstimate,
    check_growth_bounds,
    drift_oracle,
    empirical_count_distribution,
    estimate_velocity,
    expected_velocity,
    invariance_check,
    steady_state,
    tv_distance,
)
from .model import (
    ModelParams,
    State,
    attach,
    detach,
    expect_one_step,
    flip_status,
    initial_state,
    project,
    rate,
    sample_jump,
    site_selection_probs,
)
from .simulator import (
    SemiMarkovConfig,
    Trajectory,
    TrajectorySummary,
    simulate_ensemble,
    simulate_markov,
    simulate_semi_markov,
    state_at,
)
from .stochastic import (
    ContinuousPoisson,
    DiscreteMixture,
    Exponential,
    PointMass,
    TruncatedNormal,
    UniformBox,
    make_rng,
    sample_perturbation,
    sample_wait,
    substream,
)

__version__ = "0.1.0"
