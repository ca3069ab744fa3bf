"""Exact simulation and perfect sampling of spatial birth-death point processes.

The package is organized in dependency order:

- geometry: windows (boxes and tori), configurations, distances, snapshots.
- models: Gibbs birth-rate models with envelopes, increment kernels, energies,
  rate sandwiches, detailed balance and contraction diagnostics.
- noise: the slab-structured driving randomness; regenerable, seedable,
  bit-identical across runs.
- engine: the event-driven thinning simulator and the common-noise coupled run.
- cftp: sandwich coupling from the past (exact stationary draws), extremal
  forward runs, coupling decay measurements.
- analysis: the finite-state oracle, closed-form occupancy law, and the
  statistical validation toolkit.
- cli: JSON-configured command line front end.
"""

from .geometry import (
    Configuration,
    SimulationConfigError,
    SpaceSpec,
    TimedConfiguration,
    TimedPoint,
    configuration_contains,
    kernel_mass,
    nearest_distance,
    snapshot_from_json,
    snapshot_to_json,
    symmetric_difference,
    torus_distance,
)
from .models import (
    AreaInteractionRate,
    BalanceCheck,
    CellOccupancyRate,
    ConstantDeath,
    ConstantRate,
    ContractionEstimate,
    GrainOverlap,
    NearestNeighborRate,
    PairwiseRate,
    RateModel,
    UnitDeath,
    UnsupportedModelError,
    contraction_constant,
    death_rate,
    detailed_balance_residual,
    envelope_total,
    model_from_config,
    sandwich_rates,
)
from .noise import (
    NoisePoint,
    NoiseStream,
    initial_clocks,
    keyed_generator,
    mix64,
    poisson_configuration,
    replicate_seed,
)
from .engine import Event, Trajectory, coupled_simulate, simulate, snapshot, timed_snapshot
from .cftp import (
    CouplingDecay,
    PerfectSample,
    SandwichConvergenceError,
    SandwichState,
    ancient_survivors,
    coupling_decay_curve,
    extremal_lookback_counts,
    funnel_violations,
    maximal_stationary_sample,
    minimal_stationary_sample,
    perfect_sample,
    sandwich_run,
)
from .analysis import (
    Chi2Result,
    DistributionTable,
    KSResult,
    MeckeResult,
    OracleModel,
    OracleSolveError,
    RipleyResult,
    StationarityResidual,
    block_average_diagnostic,
    chi_square_gof,
    discrete_generator_residual,
    empirical_count_table,
    gibbs_table,
    lifetime_ks_test,
    mecke_test,
    observed_lifetimes,
    oracle_stationary,
    ripley_k,
    stationarity_residual,
    tv_distance,
    two_sample_count_test,
)

__version__ = "0.1.0"
